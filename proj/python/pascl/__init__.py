"""Long-tailed OOD detection: synthetic benchmark, two-stage training, metrics."""

from ._core import (  # noqa: F401
    ConfigError,
    DataError,
    InputError,
    NumericError,
    StateError,
    aupr,
    auroc,
    compute_report,
    config_hash,
    config_keys,
    default_config,
    derive_seed,
    fpr_at_tpr,
    generate,
    grad_suite,
    longtailed_counts,
    ood_score,
    pascl_contrastive,
    render_config,
    run_experiment,
    tail_class_set,
)

__all__ = [name for name in dir() if not name.startswith("_")]
