"""Federated learning simulation with sharpness-aware local training,
server-side weight averaging, and loss-landscape analysis."""

from ._fedflat import (
    ConfigError,
    FormatError,
    GeometryError,
    MlpObjective,
    NumericalError,
    UsageError,
    check_export_schema,
    compare,
    cyclic_lr,
    dirichlet_partition,
    fedavg_aggregate,
    fedavgm_update,
    lambda_max,
    load_config,
    loss_plane,
    plane_basis,
    random_surface,
    run_experiment,
    sam_perturb,
    swa_absorb,
    synth_classification,
    top_k_eigs,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "GeometryError",
    "MlpObjective",
    "NumericalError",
    "UsageError",
    "check_export_schema",
    "compare",
    "cyclic_lr",
    "dirichlet_partition",
    "fedavg_aggregate",
    "fedavgm_update",
    "lambda_max",
    "load_config",
    "loss_plane",
    "plane_basis",
    "random_surface",
    "run_experiment",
    "sam_perturb",
    "swa_absorb",
    "synth_classification",
    "top_k_eigs",
]
