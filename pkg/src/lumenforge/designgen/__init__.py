"""Ground-truth design generation: ray mapping, LM fitting, and databases."""

from .database import (
    DesignRecord,
    GridPlan,
    RandomPlan,
    TRAINING_BOX,
    generate_database,
    plan_targets,
    read_database,
    record_seed,
    target_from_dict,
    target_to_dict,
    warm_start_parents,
)
from .fit import (
    DesignOptions,
    DesignResult,
    FitResult,
    LMOptions,
    design_surface,
    fit_surface,
    init_surface,
)
from .lm import DivergenceError, LMResult, fd_jacobian, levenberg_marquardt
from .mapping import disk_to_square, equal_flux_directions, square_to_disk, target_map

__all__ = [
    "DesignOptions",
    "DesignRecord",
    "DesignResult",
    "DivergenceError",
    "FitResult",
    "GridPlan",
    "LMOptions",
    "LMResult",
    "RandomPlan",
    "TRAINING_BOX",
    "design_surface",
    "disk_to_square",
    "equal_flux_directions",
    "fd_jacobian",
    "fit_surface",
    "generate_database",
    "init_surface",
    "levenberg_marquardt",
    "plan_targets",
    "read_database",
    "record_seed",
    "square_to_disk",
    "target_from_dict",
    "target_map",
    "target_to_dict",
    "warm_start_parents",
]
