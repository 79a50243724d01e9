"""Multi-modal mmWave beam prediction with BEV-space sensor fusion."""

import os as _os

# Cap BLAS threads before numpy initializes its pool; BEVBEAM_THREADS wins
# over nothing, never over an explicit user setting.
_threads = _os.environ.get("BEVBEAM_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from . import nd  # noqa: E402
from .errors import (  # noqa: E402
    BevBeamError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NumericError,
)

__version__ = "0.1.0"
__all__ = [
    "nd", "BevBeamError", "ConfigError", "ContractError", "DimensionError",
    "FormatError", "NumericError", "BeamPredictor", "GpsOnlyBeamPredictor",
]


def __getattr__(name):
    # estimators import the full model stack; load lazily to keep
    # `import bevbeam` light
    if name in ("BeamPredictor", "GpsOnlyBeamPredictor"):
        from . import estimator
        return getattr(estimator, name)
    raise AttributeError(f"module 'bevbeam' has no attribute {name!r}")
