"""
Información de gradiente normalizada (NGI) y codificada espacialmente (SEGI)

La SEGI de una imagen es, para cada escala sigma_k, el campo de gradientes
unitarios suavizado con una gaussiana de desviación sigma_k. La similitud
entre dos SEGI es la distancia coseno media, promediada sobre las escalas.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from . import filters
from .core import Volume
from .errors import ConfigError, InvalidVolumeError, ShapeMismatchError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class VectorField:
    """Un vector 3-D real por vóxel"""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 4 or vectors.shape[-1] != 3:
            raise InvalidVolumeError(f"Se esperaba un campo (d0, d1, d2, 3), forma {vectors.shape}")
        object.__setattr__(self, "vectors", vectors)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.vectors.shape[:3])

    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)


@dataclass(frozen=True, eq=False)
class SegiField:
    """Conjunto {SG^sigma_1, ..., SG^sigma_K} de campos suavizados"""

    sigmas: Tuple[float, ...]
    fields: Tuple[VectorField, ...]

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "fields", tuple(self.fields))
        if len(self.sigmas) != len(self.fields):
            raise InvalidVolumeError(
                f"{len(self.sigmas)} escalas para {len(self.fields)} campos", stage="segi"
            )
        if len({f.dims for f in self.fields}) > 1:
            raise ShapeMismatchError("Los campos de una SEGI deben compartir dimensiones", stage="segi")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.fields[0].dims


def image_gradient(vol: Volume) -> VectorField:
    """Gradiente por diferencias centrales (laterales en los bordes), unidades de vóxel"""
    if vol.is_label:
        raise InvalidVolumeError("El gradiente solo se define para volúmenes de intensidad", stage="segi")
    return VectorField(filters.gradient(vol.data))


def _normalize(vectors: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(vectors, axis=-1)
    keep = norm >= eps
    safe = np.where(keep, norm, 1.0)
    normalized = np.where(keep[..., None], vectors / safe[..., None], 0.0)
    return normalized, norm


def normalize_gradient(g: VectorField, eps: float = DEFAULT_EPS) -> VectorField:
    """G(x) = g(x) / |g(x)|, o el vector nulo cuando |g(x)| < eps"""
    normalized, _ = _normalize(g.vectors, eps)
    return VectorField(normalized)


def normalize_adjoint(norm: np.ndarray, normalized: np.ndarray, bar: np.ndarray,
                      eps: float) -> np.ndarray:
    """Traspuesto del jacobiano de la normalización: (I - G G^T) / |g|"""
    keep = norm >= eps
    safe = np.where(keep, norm, 1.0)
    radial = np.sum(normalized * bar, axis=-1, keepdims=True)
    projected = (bar - normalized * radial) / safe[..., None]
    return np.where(keep[..., None], projected, 0.0)


def gaussian_smooth_field(f: VectorField, sigma: float) -> VectorField:
    """Convolución gaussiana separable de cada componente (radio ceil(3 sigma), bordes replicados)"""
    return VectorField(filters.smooth(f.vectors, sigma))


class SegiTape(NamedTuple):
    """Intermedios de la SEGI que necesita el cálculo adjunto"""

    norm: np.ndarray
    normalized: np.ndarray
    smoothed: List[np.ndarray]


def segi_forward(data: np.ndarray, sigmas: Sequence[float], eps: float) -> SegiTape:
    normalized, norm = _normalize(filters.gradient(data), eps)
    smoothed = [filters.smooth(normalized, sigma) for sigma in sigmas]
    return SegiTape(norm, normalized, smoothed)


def segi(vol: Volume, sigmas: Sequence[float], eps: float = DEFAULT_EPS) -> SegiField:
    """SEGI multiescala de un volumen de intensidades"""
    sigmas = tuple(float(s) for s in sigmas)
    if not sigmas:
        raise ConfigError("Se requiere al menos una escala sigma", stage="segi")
    if vol.is_label:
        raise InvalidVolumeError("La SEGI solo se define para volúmenes de intensidad", stage="segi")

    ngi = normalize_gradient(image_gradient(vol), eps)
    return SegiField(sigmas, tuple(gaussian_smooth_field(ngi, s) for s in sigmas))


def cosine_map(a: np.ndarray, b: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Coseno vóxel a vóxel; 0 cuando alguna norma es menor que eps"""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    keep = (na >= eps) & (nb >= eps)
    denom = np.where(keep, na * nb, 1.0)
    cos = np.sum(a * b, axis=-1) / denom
    return np.where(keep, np.clip(cos, -1.0, 1.0), 0.0)


def cosine_adjoint(a: np.ndarray, b: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """d cos(a, b) / d a = (b/|b| - cos a/|a|) / |a|"""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    keep = (na >= eps) & (nb >= eps)
    na_safe = np.where(keep, na, 1.0)[..., None]
    nb_safe = np.where(keep, nb, 1.0)[..., None]
    cos = np.sum(a * b, axis=-1, keepdims=True) / (na_safe * nb_safe)
    grad = b / (na_safe * nb_safe) - cos * a / (na_safe * na_safe)
    return np.where(keep[..., None], grad, 0.0)


def check_compatible(a: SegiField, b: SegiField):
    if a.sigmas != b.sigmas:
        raise ShapeMismatchError(f"Escalas distintas: {a.sigmas} vs {b.sigmas}", stage="segi")
    if a.dims != b.dims:
        raise ShapeMismatchError(f"Dimensiones distintas: {a.dims} vs {b.dims}", stage="segi")


def segi_loss(a: SegiField, b: SegiField, eps: float = DEFAULT_EPS) -> float:
    """
    Distancia coseno entre dos SEGI

    Returns:
        (1/K) * sum_k -mean_x cos(a_k(x), b_k(x)), en [-1, 1]
    """
    check_compatible(a, b)
    per_scale = [-float(np.mean(cosine_map(fa.vectors, fb.vectors, eps)))
                 for fa, fb in zip(a.fields, b.fields)]
    return float(np.mean(per_scale))
