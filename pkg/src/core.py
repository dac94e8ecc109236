"""
Sustrato geométrico: volúmenes, campos de desplazamiento, interpolación y warping

Convenciones:
- Los datos se guardan como arreglos numpy float64 con forma (d0, d1, d2) en
  orden C; el vóxel (i, j, k) es `data[i, j, k]`.
- Los desplazamientos están en unidades de vóxel; el espaciado solo interviene
  en las distancias físicas (ASD) y en el regridding.
- El muestreo fuera de la rejilla replica el borde (clamp por eje).
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import filters
from .errors import ConfigError, InvalidVolumeError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

INTENSITY = "intensity"
LABEL = "label"
VOLUME_KINDS = (INTENSITY, LABEL)

Triple = Tuple[float, float, float]


def _as_triple(values: Sequence[float], name: str) -> Triple:
    values = tuple(float(v) for v in values)
    if len(values) != 3:
        raise InvalidVolumeError(f"{name} debe tener 3 componentes, recibido {values}")
    return values


@dataclass(frozen=True, eq=False)
class Volume:
    """Rejilla escalar 3-D inmutable (intensidades o etiquetas)"""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    kind: str = INTENSITY
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidVolumeError(f"Se esperaba un arreglo 3-D no vacío, forma {data.shape}")

        spacing = _as_triple(self.spacing, "spacing")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise InvalidVolumeError(f"El espaciado debe ser estrictamente positivo: {spacing}")
        origin = _as_triple(self.origin, "origin")

        if self.kind not in VOLUME_KINDS:
            raise InvalidVolumeError(f"Tipo de volumen desconocido: {self.kind}")
        if not np.all(np.isfinite(data)):
            raise InvalidVolumeError("El volumen contiene valores no finitos")
        if self.kind == LABEL and (np.any(data < 0) or np.any(data != np.round(data))):
            raise InvalidVolumeError("Un volumen de etiquetas solo admite enteros no negativos")

        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def is_label(self) -> bool:
        return self.kind == LABEL

    def with_data(self, data: np.ndarray, kind: Optional[str] = None) -> "Volume":
        """Nuevo volumen sobre la misma rejilla"""
        return Volume(data, self.spacing, self.origin, kind or self.kind, dict(self.meta))

    def label_ids(self) -> List[int]:
        """Identificadores de estructura presentes (sin el fondo 0)"""
        return [int(v) for v in np.unique(self.data) if v != 0]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Campo denso de desplazamientos, un vector 3-D por vóxel en unidades de vóxel"""

    vectors: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 4 or vectors.shape[-1] != 3:
            raise InvalidVolumeError(f"Se esperaba un campo (d0, d1, d2, 3), forma {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteError("El campo de desplazamiento contiene valores no finitos", stage="field")

        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing"))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.vectors.shape[:3])

    @classmethod
    def zeros(cls, dims: Sequence[int], spacing: Triple = (1.0, 1.0, 1.0)) -> "DisplacementField":
        return cls(np.zeros(tuple(dims) + (3,)), spacing)

    @classmethod
    def constant(cls, dims: Sequence[int], vector: Sequence[float],
                 spacing: Triple = (1.0, 1.0, 1.0)) -> "DisplacementField":
        vectors = np.broadcast_to(np.asarray(vector, dtype=np.float64), tuple(dims) + (3,))
        return cls(vectors, spacing)

    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)


def check_same_dims(a, b, what: str = "operandos"):
    if tuple(a.dims) != tuple(b.dims):
        raise ShapeMismatchError(f"Dimensiones incompatibles de {what}: {a.dims} vs {b.dims}")


@lru_cache(maxsize=16)
def identity_grid(dims: Tuple[int, int, int]) -> np.ndarray:
    """Coordenadas de vóxel (i, j, k) de cada vóxel, forma (d0, d1, d2, 3), solo lectura"""
    grid = np.stack(np.indices(dims, dtype=np.float64), axis=-1)
    grid.setflags(write=False)
    return grid


# ---------------------------------------------------------------------------
# Interpolación trilineal con replicación de borde y sus derivadas
# ---------------------------------------------------------------------------

class Stencil(NamedTuple):
    """Vecinos y pesos trilineales de un conjunto de puntos"""

    lo: np.ndarray
    hi: np.ndarray
    frac: np.ndarray
    inside: np.ndarray
    shape: Tuple[int, int, int]


_CORNERS = list(itertools.product((0, 1), repeat=3))


def trilinear_stencil(shape: Sequence[int], points: np.ndarray) -> Stencil:
    """
    Calcula los 8 vecinos de cada punto tras recortar a [0, n-1] por eje

    Args:
        shape: Dimensiones de la rejilla muestreada
        points: Coordenadas de vóxel con forma (..., 3)
    """
    shape = tuple(int(n) for n in shape)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("Coordenadas de muestreo no finitas", stage="warp")

    upper = np.asarray(shape, dtype=np.float64) - 1.0
    clamped = np.clip(p, 0.0, upper)
    lo = np.minimum(np.floor(clamped), np.maximum(upper - 1.0, 0.0)).astype(np.intp)
    hi = np.minimum(lo + 1, np.asarray(shape) - 1)
    frac = clamped - lo
    inside = (p >= 0.0) & (p <= upper)
    return Stencil(lo, hi, frac, inside, shape)


def _corner_terms(stencil: Stencil):
    for corner in _CORNERS:
        index = tuple(
            stencil.hi[:, d] if corner[d] else stencil.lo[:, d] for d in range(3)
        )
        factors = [
            stencil.frac[:, d] if corner[d] else 1.0 - stencil.frac[:, d] for d in range(3)
        ]
        yield corner, index, factors


def interpolate(data: np.ndarray, stencil: Stencil) -> np.ndarray:
    """Valores interpolados; `data` puede tener un eje final de componentes"""
    trailing = data.shape[3:]
    out = np.zeros((stencil.lo.shape[0],) + trailing, dtype=np.float64)
    for _, index, factors in _corner_terms(stencil):
        weight = factors[0] * factors[1] * factors[2]
        values = data[index]
        out += weight.reshape((-1,) + (1,) * len(trailing)) * values
    return out


def interpolate_gradient(data: np.ndarray, stencil: Stencil) -> np.ndarray:
    """Derivadas del valor interpolado respecto de cada coordenada, forma (N, 3)"""
    out = np.zeros((stencil.lo.shape[0], 3), dtype=np.float64)
    for corner, index, factors in _corner_terms(stencil):
        values = data[index]
        for d in range(3):
            others = [factors[e] for e in range(3) if e != d]
            sign = 1.0 if corner[d] else -1.0
            out[:, d] += sign * others[0] * others[1] * values
    # fuera del rango el clamp vuelve constante la muestra
    return out * stencil.inside


def scatter(values: np.ndarray, stencil: Stencil) -> np.ndarray:
    """Traspuesto de `interpolate` para datos escalares: reparte `values` en la rejilla"""
    size = int(np.prod(stencil.shape))
    out = np.zeros(size, dtype=np.float64)
    for _, index, factors in _corner_terms(stencil):
        flat = np.ravel_multi_index(index, stencil.shape)
        weight = factors[0] * factors[1] * factors[2] * values
        out += np.bincount(flat, weights=weight, minlength=size)
    return out.reshape(stencil.shape)


def nearest_indices(shape: Sequence[int], points: np.ndarray) -> Tuple[np.ndarray, ...]:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("Coordenadas de muestreo no finitas", stage="warp")
    upper = np.asarray(shape) - 1
    idx = np.clip(np.floor(p + 0.5), 0, upper).astype(np.intp)
    return tuple(idx[:, d] for d in range(3))


def trilinear_sample(vol: Volume, p: Sequence[float]) -> float:
    """Interpolación trilineal de un punto continuo (coordenadas de vóxel)"""
    if vol.is_label:
        raise InvalidVolumeError("Los volúmenes de etiquetas se muestrean con nearest_sample")
    stencil = trilinear_stencil(vol.dims, np.asarray(p, dtype=np.float64))
    return float(interpolate(vol.data, stencil)[0])


def nearest_sample(vol: Volume, p: Sequence[float]) -> float:
    return float(vol.data[nearest_indices(vol.dims, np.asarray(p, dtype=np.float64))][0])


def warp_array(data: np.ndarray, vectors: np.ndarray, nearest: bool = False) -> np.ndarray:
    """output(x) = data(x + vectors(x)) sobre arreglos crudos"""
    points = identity_grid(tuple(data.shape[:3])) + vectors
    if nearest:
        return data[nearest_indices(data.shape[:3], points)].reshape(data.shape)
    stencil = trilinear_stencil(data.shape[:3], points)
    return interpolate(data, stencil).reshape(data.shape)


def warp(vol: Volume, ddf: DisplacementField) -> Volume:
    """
    Transformación espacial (I o U)(x) = I(x + U(x))

    Trilineal para intensidades y vecino más cercano para etiquetas.
    """
    check_same_dims(vol, ddf, "volumen y campo")
    return vol.with_data(warp_array(vol.data, ddf.vectors, nearest=vol.is_label))


def compose(u: DisplacementField, v: DisplacementField) -> DisplacementField:
    """Campo W con (I o U) o V = I o W: W(x) = v(x) + u(x + v(x))"""
    check_same_dims(u, v, "campos")
    points = identity_grid(v.dims) + v.vectors
    stencil = trilinear_stencil(u.dims, points)
    sampled = interpolate(u.vectors, stencil).reshape(v.vectors.shape)
    return DisplacementField(v.vectors + sampled, v.spacing)


def pyramid_dims(dims: Sequence[int], levels: int) -> List[Tuple[int, int, int]]:
    shapes = [tuple(int(n) for n in dims)]
    for _ in range(levels - 1):
        shapes.append(tuple((n + 1) // 2 for n in shapes[-1]))
    return shapes


def resample_pyramid(vol: Volume, levels: int) -> List[Volume]:
    """
    Pirámide multirresolución: el nivel 0 es la entrada y cada nivel siguiente
    se suaviza (sigma=1 vóxel) y se submuestrea por 2 en cada eje
    """
    if levels < 1:
        raise ConfigError(f"levels debe ser >= 1, recibido {levels}")
    coarsest = pyramid_dims(vol.dims, levels)[-1]
    if levels > 1 and min(coarsest) < 4:
        raise InvalidVolumeError(
            f"Volumen {vol.dims} demasiado pequeño para {levels} niveles "
            f"(el nivel más grueso sería {coarsest})",
            stage="pyramid",
        )

    pyramid = [vol]
    for _ in range(levels - 1):
        current = pyramid[-1]
        data = current.data if current.is_label else filters.smooth(current.data, 1.0)
        spacing = tuple(2.0 * s for s in current.spacing)
        pyramid.append(Volume(data[::2, ::2, ::2], spacing, current.origin, current.kind))
    return pyramid


def upsample_field(d: DisplacementField, dims: Sequence[int]) -> DisplacementField:
    """Transferencia al nivel fino: el vóxel x lee el campo grueso en x/2 y escala por 2"""
    dims = tuple(int(n) for n in dims)
    points = identity_grid(dims) / 2.0
    stencil = trilinear_stencil(d.dims, points)
    vectors = 2.0 * interpolate(d.vectors, stencil).reshape(dims + (3,))
    spacing = tuple(s / 2.0 for s in d.spacing)
    return DisplacementField(vectors, spacing)


def invert_field(d: DisplacementField, iterations: int = 100, tol: float = 1e-10) -> DisplacementField:
    """
    Inversa por punto fijo w(x) = -d(x + w(x))

    Converge cuando max |dd/dx| < 1 (campo sin plegamientos).
    """
    grid = identity_grid(d.dims)
    w = np.zeros_like(d.vectors)
    for _ in range(iterations):
        stencil = trilinear_stencil(d.dims, grid + w)
        updated = -interpolate(d.vectors, stencil).reshape(w.shape)
        change = float(np.max(np.abs(updated - w))) if w.size else 0.0
        w = updated
        if change < tol:
            break
    return DisplacementField(w, d.spacing)


def resample_to_grid(vol: Volume, reference: Volume) -> Volume:
    """Regridding de `vol` sobre la rejilla de `reference` vía coordenadas físicas"""
    physical = (identity_grid(reference.dims) * np.asarray(reference.spacing)
                + np.asarray(reference.origin))
    points = (physical - np.asarray(vol.origin)) / np.asarray(vol.spacing)
    if vol.is_label:
        data = vol.data[nearest_indices(vol.dims, points)]
    else:
        data = interpolate(vol.data, trilinear_stencil(vol.dims, points))
    logger.info(f"Volumen {vol.dims} remuestreado a la rejilla {reference.dims}")
    return Volume(data.reshape(reference.dims), reference.spacing, reference.origin, vol.kind,
                  dict(vol.meta))


def minmax_normalize(vol: Volume) -> Volume:
    """Lleva las intensidades a [0, 1]; un volumen constante queda en 0"""
    lo = float(vol.data.min())
    hi = float(vol.data.max())
    if hi - lo <= 0.0:
        return vol.with_data(np.zeros(vol.dims))
    return vol.with_data((vol.data - lo) / (hi - lo))
