"""
Métricas de evaluación entre mapas de etiquetas: Dice y distancia superficial
simétrica media (ASD), con agregación media ± desviación estándar
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import Volume, check_same_dims
from .errors import EmptyStructureError, InvalidVolumeError

logger = logging.getLogger(__name__)

_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def _structure_mask(vol: Volume, structure_id: int) -> np.ndarray:
    return vol.data == structure_id


def dice(a: Volume, b: Volume, structure_id: int) -> float:
    """2|A n B| / (|A| + |B|) sobre los vóxeles iguales a `structure_id`"""
    check_same_dims(a, b, "etiquetas")
    mask_a = _structure_mask(a, structure_id)
    mask_b = _structure_mask(b, structure_id)

    total = int(mask_a.sum()) + int(mask_b.sum())
    if total == 0:
        raise EmptyStructureError(f"La estructura {structure_id} no aparece en ningún volumen")
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Vóxeles de la estructura con algún vecino 6-conexo de fondo (el exterior cuenta como fondo)"""
    eroded = ndimage.binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)
    return mask & ~eroded


def _surface_points(vol: Volume, structure_id: int, spacing: np.ndarray) -> np.ndarray:
    mask = _structure_mask(vol, structure_id)
    if not mask.any():
        raise EmptyStructureError(f"La estructura {structure_id} está vacía en uno de los volúmenes")
    return np.argwhere(surface_voxels(mask)).astype(np.float64) * spacing


def asd(a: Volume, b: Volume, structure_id: int,
        spacing: Optional[Sequence[float]] = None) -> float:
    """
    Distancia superficial simétrica media en mm

    Media conjunta de las distancias de cada vóxel de superficie de A al más
    cercano de B y viceversa.
    """
    check_same_dims(a, b, "etiquetas")
    spacing = np.asarray(a.spacing if spacing is None else spacing, dtype=np.float64)
    if spacing.shape != (3,) or np.any(spacing <= 0):
        raise InvalidVolumeError(f"Espaciado inválido: {spacing}", stage="eval")

    points_a = _surface_points(a, structure_id, spacing)
    points_b = _surface_points(b, structure_id, spacing)

    dist_ab, _ = cKDTree(points_b).query(points_a)
    dist_ba, _ = cKDTree(points_a).query(points_b)
    return float((dist_ab.sum() + dist_ba.sum()) / (len(dist_ab) + len(dist_ba)))


@dataclass(frozen=True)
class StructureScore:
    case: str
    structure: int
    dice: float
    asd: float

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"Dice fuera de [0, 1]: {self.dice}")
        if not self.asd >= 0.0:
            raise ValueError(f"ASD negativa: {self.asd}")


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class EvalReport:
    """Resultados por estructura (y por caso) con resumen media ± desviación"""

    entries: List[StructureScore] = field(default_factory=list)

    @classmethod
    def merge(cls, reports: Iterable["EvalReport"]) -> "EvalReport":
        merged = cls()
        for report in reports:
            merged.entries.extend(report.entries)
        return merged

    def structures(self) -> List[int]:
        return sorted({e.structure for e in self.entries})

    def summary(self) -> Dict[str, Tuple[float, float]]:
        """Media y desviación estándar poblacional de cada métrica sobre todas las entradas"""
        if not self.entries:
            return {}
        return {
            "dice": _mean_std([e.dice for e in self.entries]),
            "asd": _mean_std([e.asd for e in self.entries]),
        }

    def by_structure(self) -> Dict[int, Dict[str, Tuple[float, float]]]:
        grouped = {}
        for structure in self.structures():
            selected = [e for e in self.entries if e.structure == structure]
            grouped[structure] = {
                "dice": _mean_std([e.dice for e in selected]),
                "asd": _mean_std([e.asd for e in selected]),
            }
        return grouped

    def to_dict(self) -> Dict:
        return {
            "entries": [asdict(e) for e in self.entries],
            "summary": {k: {"mean": m, "std": s} for k, (m, s) in self.summary().items()},
            "by_structure": {
                str(structure): {k: {"mean": m, "std": s} for k, (m, s) in metrics.items()}
                for structure, metrics in self.by_structure().items()
            },
        }

    def format_table(self) -> str:
        """Tabla de texto: DS (%) y ASD (mm) como media±desviación con 2 decimales"""
        lines = [
            f"{'Estructura':<12}{'DS (%)':>16}{'ASD (mm)':>16}",
            "-" * 44,
        ]
        for structure, metrics in self.by_structure().items():
            lines.append(_table_row(str(structure), metrics))
        if self.entries:
            lines.append("-" * 44)
            lines.append(_table_row("Media", self.summary()))
        return "\n".join(lines) + "\n"


def _table_row(name: str, metrics: Dict[str, Tuple[float, float]]) -> str:
    dice_mean, dice_std = metrics["dice"]
    asd_mean, asd_std = metrics["asd"]
    ds = f"{100.0 * dice_mean:.2f}±{100.0 * dice_std:.2f}"
    distance = f"{asd_mean:.2f}±{asd_std:.2f}"
    return f"{name:<12}{ds:>16}{distance:>16}"


def evaluate_labels(a: Volume, b: Volume, structure_ids: Sequence[int],
                    spacing: Optional[Sequence[float]] = None, case: str = "") -> EvalReport:
    """Calcula Dice y ASD de cada estructura pedida"""
    report = EvalReport()
    for structure_id in structure_ids:
        score = StructureScore(case, int(structure_id),
                               dice(a, b, structure_id), asd(a, b, structure_id, spacing))
        logger.info(f"Estructura {structure_id}{' (' + case + ')' if case else ''}: "
                    f"DS={100 * score.dice:.2f}% ASD={score.asd:.2f} mm")
        report.entries.append(score)
    return report
