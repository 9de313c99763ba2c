"""Contact-aware human-scene reconstruction toolkit."""

from contact4d._core import (
    DegenerateInputError,
    IntegrityError,
    NumericError,
    SchemaError,
    UndefinedMetricError,
    __version__,
    contact_prf,
    evaluate,
    foot_sliding,
    geo_contact_error,
    grad_check,
    jitter,
    pa_mpjpe,
    plausibility,
    rte,
    run_demo,
    synthesize,
    umeyama_align,
    w_mpjpe,
    wa_mpjpe,
)

__all__ = [
    "DegenerateInputError",
    "IntegrityError",
    "NumericError",
    "SchemaError",
    "UndefinedMetricError",
    "__version__",
    "contact_prf",
    "evaluate",
    "foot_sliding",
    "geo_contact_error",
    "grad_check",
    "jitter",
    "pa_mpjpe",
    "plausibility",
    "rte",
    "run_demo",
    "synthesize",
    "umeyama_align",
    "w_mpjpe",
    "wa_mpjpe",
]
