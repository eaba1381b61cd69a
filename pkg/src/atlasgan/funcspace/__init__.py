from .bump import (
    BumpFamily,
    BumpGrad,
    ShapeError,
    eval_bump,
    grad_bump_input,
    grad_bump_params,
    project_constraints,
)
from .io import FormatError, family_from_bytes, family_from_json, family_to_bytes, family_to_json
from .wavelet import FilterError, ScalingTable, WaveletFamily, cascade, daubechies_filter, eval_wavelet

__all__ = [
    "BumpFamily",
    "BumpGrad",
    "ShapeError",
    "eval_bump",
    "grad_bump_input",
    "grad_bump_params",
    "project_constraints",
    "FormatError",
    "family_from_bytes",
    "family_from_json",
    "family_to_bytes",
    "family_to_json",
    "FilterError",
    "ScalingTable",
    "WaveletFamily",
    "cascade",
    "daubechies_filter",
    "eval_wavelet",
]
