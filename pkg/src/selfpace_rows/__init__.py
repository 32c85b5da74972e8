"""Self-paced training of text-row detectors on pages with missing labels."""

from .curriculum import Curriculum, build_random_curriculum, build_sorted_curriculum
from .dataset import (
    AnnotatedPage,
    Corpus,
    DatasetError,
    DropPolicy,
    PageImage,
    drop_labels,
    import_normalized_annotations,
    load_corpus,
    save_corpus,
)
from .detector import (
    ExternalDetector,
    LogisticRowDetector,
    OracleDetector,
    OracleSkill,
    TrainConfig,
    TrainingError,
    external_detect,
    oracle_predict,
)
from .evaluation import ReportRow, average_precision, evaluate, match, mean_iou, render_report
from .geometry import BBox, iou, nms
from .orchestrator import merge_pseudo_labels, run_baseline, run_spl
from .synthgen import PageStyle, generate_corpus, generate_page

__version__ = "0.1.0"
