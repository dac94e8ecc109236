"""
Términos de pérdida: consistencia cíclica, suavidad de los campos y pérdida total
"""

import logging
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Dict

import numpy as np

from .core import DisplacementField, Volume, check_same_dims, warp, warp_array
from .errors import InvalidVolumeError, NonFiniteError
from .segi import segi, segi_loss

if TYPE_CHECKING:
    from .optim import RegistrationConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    """Desglose de L = L_SG + lambda1 L_CC + lambda2 (Psi(U) + Psi(V))"""

    l_sg: float
    l_cc: float
    psi_u: float
    psi_v: float
    total: float
    lambda1: float
    lambda2: float

    @classmethod
    def assemble(cls, l_sg: float, l_cc: float, psi_u: float, psi_v: float,
                 lambda1: float, lambda2: float) -> "LossBreakdown":
        total = l_sg + lambda1 * l_cc + lambda2 * (psi_u + psi_v)
        parts = (l_sg, l_cc, psi_u, psi_v, total)
        if not all(np.isfinite(p) for p in parts):
            raise NonFiniteError(f"Pérdida no finita: {parts}", stage="loss")
        return cls(float(l_sg), float(l_cc), float(psi_u), float(psi_v), float(total),
                   float(lambda1), float(lambda2))

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def cycle_loss(moving: Volume, u: DisplacementField, v: DisplacementField) -> float:
    """Error absoluto medio entre (I_m o U) o V e I_m"""
    check_same_dims(moving, u, "volumen y campo U")
    check_same_dims(moving, v, "volumen y campo V")
    restored = warp_array(warp_array(moving.data, u.vectors), v.vectors)
    return float(np.mean(np.abs(restored - moving.data)))


def smoothness(d: DisplacementField) -> float:
    """
    Regularizador de difusión: (1/|Omega|) sum_x sum_c |grad d_c(x)|^2 con
    diferencias hacia adelante (sin contribución en la última rebanada de cada eje)
    """
    if min(d.dims) < 2:
        raise InvalidVolumeError(f"Psi requiere al menos 2 vóxeles por eje, dims={d.dims}",
                                 stage="loss")
    total = 0.0
    for axis in range(3):
        total += float(np.sum(np.diff(d.vectors, axis=axis) ** 2))
    return total / float(np.prod(d.dims))


def smoothness_gradient(vectors: np.ndarray) -> np.ndarray:
    """dPsi/dd para el regularizador de difusión"""
    grad = np.zeros_like(vectors)
    scale = 2.0 / float(np.prod(vectors.shape[:3]))
    for axis in range(3):
        delta = np.diff(vectors, axis=axis) * scale
        acc = np.moveaxis(grad, axis, 0)
        step = np.moveaxis(delta, axis, 0)
        acc[1:] += step
        acc[:-1] -= step
    return grad


def total_loss(moving: Volume, fixed: Volume, u: DisplacementField, v: DisplacementField,
               cfg: "RegistrationConfig") -> LossBreakdown:
    """Evalúa la pérdida total y sus términos por separado"""
    check_same_dims(moving, fixed, "imágenes")
    check_same_dims(moving, u, "volumen y campo U")
    check_same_dims(moving, v, "volumen y campo V")

    fixed_segi = segi(fixed, cfg.sigmas, cfg.grad_eps)
    moved_segi = segi(warp(moving, u), cfg.sigmas, cfg.grad_eps)
    l_sg = segi_loss(moved_segi, fixed_segi, cfg.grad_eps)

    if cfg.symmetric_similarity:
        backward = segi_loss(segi(warp(fixed, v), cfg.sigmas, cfg.grad_eps),
                             segi(moving, cfg.sigmas, cfg.grad_eps), cfg.grad_eps)
        l_sg = 0.5 * (l_sg + backward)

    return LossBreakdown.assemble(
        l_sg,
        cycle_loss(moving, u, v),
        smoothness(u),
        smoothness(v),
        cfg.lambda1,
        cfg.lambda2,
    )
