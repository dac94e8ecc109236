"""
Jerarquía de errores del motor de registro
"""

from typing import Optional


class SegiRegError(Exception):
    """Error base; `stage` nombra la etapa del pipeline que falló"""

    stage = "segireg"

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class ShapeMismatchError(SegiRegError, ValueError):
    stage = "shape"


class InvalidVolumeError(SegiRegError, ValueError):
    stage = "volume"


class ConfigError(SegiRegError, ValueError):
    stage = "config"


class NonFiniteError(SegiRegError, FloatingPointError):
    stage = "gradient"


class DivergenceError(SegiRegError):
    """La pérdida total dejó de ser finita durante la optimización"""

    stage = "optim"

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class EmptyStructureError(SegiRegError, ValueError):
    stage = "eval"


class PhantomError(SegiRegError, ValueError):
    stage = "phantom"


class VolumeFormatError(SegiRegError):
    stage = "io"


class UnsupportedDatatypeError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class SliceIndexError(SegiRegError, IndexError):
    stage = "overlay"
