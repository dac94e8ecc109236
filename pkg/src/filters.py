"""
Operadores lineales separables sobre rejillas 3-D y sus traspuestos

Todos trabajan sobre los tres primeros ejes del arreglo (i, j, k); los ejes
restantes (componentes vectoriales) se tratan de forma independiente.
"""

import math
from typing import Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InvalidVolumeError

SPATIAL_AXES: Tuple[int, int, int] = (0, 1, 2)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """
    Núcleo gaussiano discreto 1-D normalizado a suma 1

    Args:
        sigma: Desviación estándar en vóxeles

    Returns:
        Arreglo de longitud 2*ceil(3*sigma)+1, simétrico
    """
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ConfigError(f"sigma debe ser positivo, recibido {sigma}", stage="segi")

    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def smooth(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Convolución gaussiana separable con bordes replicados (clamp-to-edge)"""
    kernel = gaussian_kernel(sigma)
    out = np.asarray(arr, dtype=np.float64)
    for axis in SPATIAL_AXES:
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="nearest")
    return out


def smooth_adjoint(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Traspuesto exacto de `smooth` (núcleo reflejado + acumulación en los bordes)"""
    kernel = gaussian_kernel(sigma)
    out = np.asarray(arr, dtype=np.float64)
    for axis in reversed(SPATIAL_AXES):
        out = _correlate_nearest_transpose(out, kernel, axis)
    return out


def _correlate_nearest_transpose(y: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    # correlate1d(mode='nearest') == correlación válida sobre la señal con
    # bordes replicados r veces; el traspuesto reparte y devuelve esa masa
    radius = (len(kernel) - 1) // 2
    n = y.shape[axis]

    pad_width = [(0, 0)] * y.ndim
    pad_width[axis] = (radius, radius)
    padded = np.pad(y, pad_width)

    full = ndimage.correlate1d(padded, kernel[::-1], axis=axis, mode="constant", cval=0.0)
    full = np.moveaxis(full, axis, 0)

    x = full[radius:radius + n].copy()
    x[0] += full[:radius].sum(axis=0)
    x[-1] += full[radius + n:].sum(axis=0)
    return np.moveaxis(x, 0, axis)


def gradient(arr: np.ndarray) -> np.ndarray:
    """
    Diferencias centrales en el interior y laterales en los bordes

    Returns:
        Arreglo con un eje final de 3 componentes (d/di, d/dj, d/dk)
    """
    arr = np.asarray(arr, dtype=np.float64)
    if min(arr.shape[:3]) < 2:
        raise InvalidVolumeError(
            f"El gradiente requiere al menos 2 vóxeles por eje, dims={arr.shape[:3]}",
            stage="segi",
        )
    return np.stack([np.gradient(arr, axis=axis) for axis in SPATIAL_AXES], axis=-1)


def gradient_adjoint(grad_bar: np.ndarray) -> np.ndarray:
    """Traspuesto de `gradient`: recibe (..., 3) y devuelve un escalar por vóxel"""
    grad_bar = np.asarray(grad_bar, dtype=np.float64)
    out = np.zeros(grad_bar.shape[:-1], dtype=np.float64)

    for axis in SPATIAL_AXES:
        g = np.moveaxis(grad_bar[..., axis], axis, 0)
        acc = np.moveaxis(out, axis, 0)  # vista: escribe en `out`

        interior = 0.5 * g[1:-1]
        acc[2:] += interior
        acc[:-2] -= interior

        acc[1] += g[0]
        acc[0] -= g[0]
        acc[-1] += g[-1]
        acc[-2] -= g[-1]

    return out
