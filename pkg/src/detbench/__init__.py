"""detbench: detection losses, label assignment, post-processing pipelines,
mAP evaluation, Pareto analysis, annotation conversion, and a post-processing
latency harness.
"""

from importlib import resources
from pathlib import Path

from .assignment import (
    AssignmentMode,
    AssignmentResult,
    StalConfig,
    assign_one_to_many,
    assign_one_to_one,
    stal_threshold,
    stal_thresholds,
)
from .bench import LatencyReport, bench_postproc, dense_scene
from .data_io import (
    AnnotationRecord,
    DataFormatError,
    NormalizedLabelLine,
    SyntheticSceneSpec,
    VISDRONE_CLASSES,
    VOC_CLASSES,
    denormalize,
    generate_scene,
    parse_visdrone_annotations,
    parse_visdrone_line,
    parse_voc_xml,
    profile_scene_spec,
    seeded_split,
    to_normalized,
    voc_xml_string,
)
from .evaluation import (
    EvalReport,
    GroundTruthInstance,
    ModelRecord,
    average_precision,
    confusion_matrix,
    evaluate,
    f1_from_pr,
    map_range,
    match_detections,
    pareto_frontier,
    precision_recall_f1,
)
from .geometry import Box, CiouBreakdown, ciou_loss, iou
from .losses import (
    ClassificationBatch,
    DflDistribution,
    DirectHead,
    DistributionalHead,
    LossWeights,
    ProgLossSchedule,
    bce_loss,
    composite_loss_fixed,
    composite_loss_scheduled,
    decode_head,
    dfl_decode,
    dfl_loss,
    progloss_lambda,
)
from .optimizer import (
    MuSgdConfig,
    ToyModel,
    musgd_step,
    spectral_norm,
    toy_model_grad,
    train_toy,
)
from .postproc import (
    Detection,
    PipelineConfig,
    PipelineMode,
    end_to_end_filter,
    nms,
    run_pipeline,
)

__version__ = "0.1.0"


def paper_tables_path() -> Path:
    """Location of the bundled model benchmark table."""
    return Path(str(resources.files("detbench").joinpath("data/paper_tables.csv")))
