"""LeYOLO: architecture builder, cost analyzer and numpy inference engine."""
from .analyzer import FlopParamReport, compare_variants, count, verify_constraints
from .archspec import (
    ABLATION_STEPS,
    VARIANTS,
    AblationConfig,
    ArchitectureSpec,
    VariantConfig,
    apply_ablation,
    apply_variant,
    build_spec,
    validate,
)
from .engine import Model, bind, forward
from .modelio import init_random, read_ppm, read_store, write_store
from .postprocess import Detection, decode, letterbox, nms, postprocess

__version__ = "0.1.0"
