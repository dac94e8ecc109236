"""
Generador de pares sintéticos multimodalidad con deformación conocida
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .core import LABEL, DisplacementField, Volume, check_same_dims, identity_grid, warp
from .errors import EmptyStructureError, PhantomError

logger = logging.getLogger(__name__)

SHAPES = ("sphere", "two-spheres", "cuboid-with-notch")
DEFORMATIONS = ("zero", "translation", "gaussian-bump")


def _piecewise_monotone(t: np.ndarray) -> np.ndarray:
    return np.where(t < 0.5, 0.4 * t, 0.2 + 1.6 * (t - 0.5))


REMAPS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda t: t,
    "invert": lambda t: 1.0 - t,
    "square": lambda t: t * t,
    "piecewise-monotone": _piecewise_monotone,
    # función tienda: no monótona, invierte la dirección de la mitad de los bordes
    "contrast-fold": lambda t: 1.0 - np.abs(2.0 * t - 1.0),
}


@dataclass(frozen=True)
class PhantomSpec:
    """Descripción de un par sintético"""

    dims: Tuple[int, int, int] = (48, 48, 48)
    shape: str = "sphere"
    modality_remap: str = "identity"
    deformation: str = "zero"
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bump_center: Optional[Tuple[float, float, float]] = None
    bump_amplitude: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bump_width: float = 6.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
            object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))
            object.__setattr__(self, "bump_amplitude", tuple(float(a) for a in self.bump_amplitude))
            if self.bump_center is not None:
                object.__setattr__(self, "bump_center", tuple(float(c) for c in self.bump_center))
            object.__setattr__(self, "bump_width", float(self.bump_width))
            object.__setattr__(self, "noise_sigma", float(self.noise_sigma))
            object.__setattr__(self, "seed", int(self.seed))
        except (TypeError, ValueError) as e:
            raise PhantomError(f"Tipo inválido en la especificación del fantoma: {e}") from e
        if len(self.translation) != 3 or len(self.bump_amplitude) != 3 or (
                self.bump_center is not None and len(self.bump_center) != 3):
            raise PhantomError("translation, bump_amplitude y bump_center deben tener 3 componentes")

        if len(self.dims) != 3 or min(self.dims) < 4:
            raise PhantomError(f"dims inválidas para un fantoma: {self.dims}")
        if self.shape not in SHAPES:
            raise PhantomError(f"Forma desconocida '{self.shape}', opciones: {SHAPES}")
        if not isinstance(self.modality_remap, str) or self.modality_remap not in REMAPS:
            raise PhantomError(f"Remapeo desconocido '{self.modality_remap}', opciones: {sorted(REMAPS)}")
        if self.deformation not in DEFORMATIONS:
            raise PhantomError(f"Deformación desconocida '{self.deformation}', opciones: {DEFORMATIONS}")
        if self.noise_sigma < 0:
            raise PhantomError(f"noise_sigma debe ser >= 0: {self.noise_sigma}")

        if self.deformation == "gaussian-bump":
            if not self.bump_width > 0:
                raise PhantomError(f"bump_width debe ser positivo: {self.bump_width}")
            # sup |dW/dx| de un bache gaussiano: |a| exp(-1/2) / sigma_b
            slope = float(np.linalg.norm(self.bump_amplitude)) * math.exp(-0.5) / self.bump_width
            if slope >= 1.0:
                raise PhantomError(
                    f"La deformación pliega la rejilla (max |dW/dx| = {slope:.3f} >= 1)"
                )

    @classmethod
    def from_dict(cls, values: Dict) -> "PhantomSpec":
        if not isinstance(values, dict):
            raise PhantomError(f"La especificación del fantoma debe ser un objeto JSON: {values!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise PhantomError(f"Claves desconocidas en la especificación: {sorted(unknown)}")
        return cls(**values)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0


class PhantomPair(NamedTuple):
    moving: Volume
    fixed: Volume
    moving_label: Volume
    fixed_label: Volume
    truth: DisplacementField


def _box_distance(points: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    q = np.abs(points - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def structure_distances(spec: PhantomSpec, points: np.ndarray) -> List[Tuple[int, np.ndarray]]:
    """Distancia con signo (negativa dentro) de cada estructura, en vóxeles"""
    center = spec.center
    size = float(min(spec.dims))

    if spec.shape == "sphere":
        return [(1, np.linalg.norm(points - center, axis=-1) - 0.25 * size)]

    if spec.shape == "two-spheres":
        offset = np.array([0.22 * spec.dims[0], 0.0, 0.0])
        radius = 0.16 * size
        return [
            (1, np.linalg.norm(points - (center - offset), axis=-1) - radius),
            (2, np.linalg.norm(points - (center + offset), axis=-1) - radius),
        ]

    half = 0.25 * np.asarray(spec.dims, dtype=np.float64)
    box = _box_distance(points, center, half)
    notch_center = center + np.array([half[0], 0.0, 0.0])
    notch_half = np.array([0.5 * half[0], 0.35 * half[1], 2.0 * half[2]])
    notch = _box_distance(points, notch_center, notch_half)
    return [(1, np.maximum(box, -notch))]


def _smooth_profile(distance: np.ndarray) -> np.ndarray:
    # 1 dentro, 0 fuera, banda de transición suave de 2 vóxeles
    t = np.clip(0.5 - 0.5 * distance, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def truth_field(spec: PhantomSpec) -> DisplacementField:
    """Deformación de referencia evaluada analíticamente en cada vóxel (marco fijo)"""
    if spec.deformation == "zero":
        return DisplacementField.zeros(spec.dims)
    if spec.deformation == "translation":
        return DisplacementField.constant(spec.dims, spec.translation)

    center = spec.center if spec.bump_center is None else np.asarray(spec.bump_center)
    grid = identity_grid(spec.dims)
    r2 = np.sum((grid - center) ** 2, axis=-1)
    profile = np.exp(-r2 / (2.0 * spec.bump_width ** 2))
    return DisplacementField(profile[..., None] * np.asarray(spec.bump_amplitude))


def _label_volume(spec: PhantomSpec, points: np.ndarray) -> Volume:
    labels = np.zeros(spec.dims)
    for structure_id, distance in structure_distances(spec, points):
        labels[distance <= 0.0] = structure_id
    return Volume(labels, kind=LABEL)


def generate_pair(spec: PhantomSpec) -> PhantomPair:
    """
    Construye un par (móvil, fija) con etiquetas y deformación conocidas

    fixed = base (+ ruido); moving = remap(warp(base, truth)). Las etiquetas
    móviles se obtienen evaluando las formas en x + truth(x).
    """
    grid = identity_grid(spec.dims)
    distances = structure_distances(spec, grid)
    combined = np.min(np.stack([d for _, d in distances]), axis=0)
    base = Volume(_smooth_profile(combined))

    truth = truth_field(spec)
    moved = warp(base, truth)
    moving = moved.with_data(REMAPS[spec.modality_remap](moved.data))

    fixed = base
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        fixed = base.with_data(base.data + spec.noise_sigma * rng.standard_normal(spec.dims))

    logger.info(f"Fantoma {spec.shape} {spec.dims}: remapeo={spec.modality_remap}, "
                f"deformación={spec.deformation}, |truth|max={truth.magnitude().max():.3f}")
    return PhantomPair(
        moving=moving,
        fixed=fixed,
        moving_label=_label_volume(spec, grid + truth.vectors),
        fixed_label=_label_volume(spec, grid),
        truth=truth,
    )


def endpoint_error(estimate: DisplacementField, truth: DisplacementField, mask: Volume) -> float:
    """Norma euclídea media de (estimado - verdad) sobre los vóxeles de la máscara"""
    check_same_dims(estimate, truth, "campos")
    check_same_dims(estimate, mask, "campo y máscara")
    selected = mask.data > 0
    if not selected.any():
        raise EmptyStructureError("La máscara del error de punto final está vacía", stage="phantom")
    errors = np.linalg.norm(estimate.vectors - truth.vectors, axis=-1)
    return float(errors[selected].mean())
