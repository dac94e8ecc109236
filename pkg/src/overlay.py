"""
Generador de cortes con contornos de etiquetas superpuestos
"""

import io
import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from PIL import Image, ImageColor

from .core import Volume, check_same_dims
from .errors import ConfigError, SliceIndexError
from .evaluation import surface_voxels
from .volume_io import atomic_write_bytes

logger = logging.getLogger(__name__)

# eje que fija cada plano: axial -> k, coronal -> j, sagital -> i
PLANES: Dict[str, int] = {"axial": 2, "coronal": 1, "sagittal": 0}


class OverlayRenderer:
    """Dibuja un corte en escala de grises con los contornos de cada volumen de etiquetas"""

    def __init__(self):
        # colores sólidos por orden: referencia, móvil/movida, extras
        self.colors = [
            '#1f4fff',   # Azul: etiqueta de referencia (imagen fija)
            '#ff2a2a',   # Rojo: etiqueta móvil o movida
            '#ffd400',   # Amarillo
            '#21c45a',   # Verde
        ]

    def render(self, fixed: Volume, label_contours: Sequence[Volume], plane: str,
               index: int) -> Image.Image:
        if plane not in PLANES:
            raise ConfigError(f"Plano desconocido '{plane}', opciones: {sorted(PLANES)}", stage="overlay")
        axis = PLANES[plane]
        if not 0 <= index < fixed.dims[axis]:
            raise SliceIndexError(
                f"Índice de corte {index} fuera de rango para el plano {plane} "
                f"(0..{fixed.dims[axis] - 1})"
            )

        gray = np.rint(np.clip(np.take(fixed.data, index, axis=axis), 0.0, 1.0) * 255.0)
        rgb = np.repeat(gray.astype(np.uint8)[..., None], 3, axis=-1)

        for position, labels in enumerate(label_contours):
            check_same_dims(fixed, labels, "imagen y etiquetas")
            color = ImageColor.getrgb(self.colors[position % len(self.colors)])
            rgb[contour_mask(labels, axis, index)] = color

        return Image.fromarray(rgb)


def contour_mask(labels: Volume, axis: int, index: int) -> np.ndarray:
    """Vóxeles de superficie de cualquier estructura que caen en el corte"""
    contour = np.zeros(labels.dims, dtype=bool)
    for structure_id in labels.label_ids():
        contour |= surface_voxels(labels.data == structure_id)
    return np.take(contour, index, axis=axis)


def emit_overlay(fixed: Volume, label_contours: List[Volume], plane: str, index: int,
                 path) -> Path:
    """
    Escribe el corte como imagen PPM (ventana de intensidad [0, 1] a 8 bits)

    Returns:
        Ruta del archivo generado
    """
    try:
        image = OverlayRenderer().render(fixed, label_contours, plane, index)
        buffer = io.BytesIO()
        image.save(buffer, format="PPM")
        atomic_write_bytes(path, buffer.getvalue())
        logger.info(f"Superposición generada: {path}")
        return Path(path)
    except Exception as e:
        logger.error(f"Error generando superposición: {e}")
        raise
