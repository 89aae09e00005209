"""roitrack: single-object tracking via a size-conditioned, template-aware
convolutional heatmap extractor and a lightweight geometric window controller.
"""

from .controller import SizeEstimate, Window
from .errors import FormatError, ParameterError, ShapeError, TrainingError
from .metrics import (
    BBox,
    ScoreReport,
    combine_reports,
    heatmap_iou,
    overlap_to_iou,
    rasterize_gt,
    score_sequence,
)
from .model import (
    BranchId,
    ModelParams,
    TemplateFeatures,
    build_model,
    encode_template,
    extract_roi_matrix,
    load_model,
    save_model,
    select_branch,
    train,
)
from .scene import SceneConfig, SequenceRecord, gen_sequence, oracle_heatmap, render_overlay
from .tracker import TrackerConfig, TrackerState, init_tracker, run_sequence, track_frame

__version__ = "0.1.0"
