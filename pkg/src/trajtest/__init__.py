"""Metamorphic testing for stochastic multimodal trajectory predictors.

Transforms scene inputs through semantic-map relations (mirror, rotate,
rescale, class change, obstacle insertion), runs a pluggable predictor, and
issues probabilistic violation verdicts (transport distance, Hellinger,
signed-rank occupancy tests) without needing ground-truth labels.
"""
from .core import (
    DEFAULT_LEGEND,
    ClassEntry,
    ClassLegend,
    Point2,
    PredictionSet,
    ProbabilityMap,
    SegmentationMap,
    TestCase,
    Trajectory,
    validate_test_case,
)
from .errors import (
    ContractError,
    DegenerateInputError,
    GenerationError,
    NumericalFailure,
    PlacementError,
    ProtocolError,
    SceneFormatError,
    SceneSkip,
)
from .harness import (
    DEFAULT_LABEL_PRESERVING,
    AgreementReport,
    CampaignResult,
    HarnessConfig,
    MRAggregate,
    SceneMRResult,
    agreement_analysis,
    run_campaign,
    run_scene,
)
from .metrics import (
    DisplacementErrors,
    OTConfig,
    TrajectoryDistribution,
    ade_fde,
    hellinger,
    hellinger_between,
    pairwise_distances,
    trajectory_cost,
    wasserstein,
    wasserstein_between,
)
from .scenegen import SceneRecipe, default_corpus, generate_scene
from .stats import (
    HtcResult,
    HvcResult,
    SourceBaseline,
    Verdict,
    WvcResult,
    htc,
    hvc,
    intersection_rate,
    wilcoxon_signed_rank,
    wvc,
    z_test,
)
from .sut import (
    BiasedMutant,
    EquivariantReference,
    ExternalProcessSut,
    MapAwareReference,
    SutRequest,
    SutResponse,
    build_sut,
)
from .transforms import MRSpec, TransformResult, apply_mr, parse_mr, transform_prediction

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_LEGEND", "ClassEntry", "ClassLegend", "Point2", "PredictionSet",
    "ProbabilityMap", "SegmentationMap", "TestCase", "Trajectory",
    "validate_test_case",
    "ContractError", "DegenerateInputError", "GenerationError",
    "NumericalFailure", "PlacementError", "ProtocolError", "SceneFormatError",
    "SceneSkip",
    "DEFAULT_LABEL_PRESERVING", "AgreementReport", "CampaignResult",
    "HarnessConfig", "MRAggregate", "SceneMRResult", "agreement_analysis",
    "run_campaign", "run_scene",
    "DisplacementErrors", "OTConfig", "TrajectoryDistribution", "ade_fde",
    "hellinger", "hellinger_between", "pairwise_distances", "trajectory_cost",
    "wasserstein", "wasserstein_between",
    "SceneRecipe", "default_corpus", "generate_scene",
    "HtcResult", "HvcResult", "SourceBaseline", "Verdict", "WvcResult",
    "htc", "hvc", "intersection_rate", "wilcoxon_signed_rank", "wvc", "z_test",
    "BiasedMutant", "EquivariantReference", "ExternalProcessSut",
    "MapAwareReference", "SutRequest", "SutResponse", "build_sut",
    "MRSpec", "TransformResult", "apply_mr", "parse_mr", "transform_prediction",
]
