"""
Lectura y escritura de volúmenes, campos y SEGI

Formato nativo: un archivo de cabecera JSON más un payload binario crudo
little-endian. Orden de ejes: el vóxel (i, j, k) se guarda en orden C (k varía
más rápido) y las componentes vectoriales van al final.

NIfTI-1 (.nii / .nii.gz) se admite solo en lectura.
"""

import json
import logging
import os
import tempfile
import zlib
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import nibabel as nib
import numpy as np
from nibabel.filebasedimages import ImageFileError
from nibabel.spatialimages import HeaderDataError

from .core import INTENSITY, LABEL, DisplacementField, Volume
from .errors import (
    TruncatedPayloadError,
    UnsupportedDatatypeError,
    VolumeFormatError,
)
from .segi import SegiField, VectorField

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

NATIVE_FORMAT = "segireg-native"
NATIVE_VERSION = 1
AXIS_ORDER = "ijk-C"
OUTPUT_DIR_ENV = "SEGIREG_OUTPUT_DIR"

ELEMENT_TYPES: Dict[str, np.dtype] = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint8": np.dtype("u1"),
    "int16": np.dtype("<i2"),
}


def resolve_output_path(path: PathLike) -> Path:
    """Las rutas relativas se resuelven contra SEGIREG_OUTPUT_DIR si está definida"""
    path = Path(path)
    base = os.getenv(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_bytes(path: PathLike, payload: bytes):
    """Escribe en un temporal del mismo directorio y lo renombra"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: PathLike, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def is_nifti(path: PathLike) -> bool:
    name = str(path).lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _payload_path(header_path: Path) -> Path:
    return header_path.with_name(header_path.stem + ".raw")


# ---------------------------------------------------------------------------
# Formato nativo
# ---------------------------------------------------------------------------

def _write_native(path: PathLike, array: np.ndarray, header: Dict, element_type: str):
    path = Path(path)
    payload_path = _payload_path(path)
    dtype = ELEMENT_TYPES[element_type]

    header = {
        "format": NATIVE_FORMAT,
        "version": NATIVE_VERSION,
        "axis_order": AXIS_ORDER,
        "byte_order": "little",
        "element_type": element_type,
        "payload": payload_path.name,
        **header,
    }
    atomic_write_bytes(payload_path, np.ascontiguousarray(array, dtype=dtype).tobytes(order="C"))
    atomic_write_text(path, json.dumps(header, indent=2, sort_keys=True) + "\n")
    logger.info(f"Escrito {path} ({header['dims']}, {element_type})")


def _read_native(path: PathLike) -> Tuple[Dict, np.ndarray]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = json.load(f)
    except UnicodeDecodeError as e:
        raise VolumeFormatError(f"Cabecera ilegible en {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise VolumeFormatError(f"Cabecera JSON mal formada en {path}: {e}") from e

    if not isinstance(header, dict) or header.get("format") != NATIVE_FORMAT:
        raise VolumeFormatError(f"{path} no es una cabecera {NATIVE_FORMAT}")
    if header.get("axis_order") != AXIS_ORDER:
        raise VolumeFormatError(f"Orden de ejes no soportado: {header.get('axis_order')}")

    element_type = header.get("element_type")
    if element_type not in ELEMENT_TYPES:
        raise UnsupportedDatatypeError(f"Tipo de elemento no soportado: {element_type}")

    try:
        dims = tuple(int(n) for n in header["dims"])
        components = int(header.get("components", 1))
        fields_count = int(header.get("fields", 1))
    except (KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(f"Cabecera incompleta en {path}: {e}") from e
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"dims inválidas en {path}: {dims}")

    dtype = ELEMENT_TYPES[element_type]
    shape = ((fields_count,) if "fields" in header else ()) + dims + ((components,) if components > 1 else ())
    expected = int(np.prod(shape)) * dtype.itemsize

    payload_path = path.with_name(header.get("payload", _payload_path(path).name))
    try:
        payload = payload_path.read_bytes()
    except OSError as e:
        raise TruncatedPayloadError(f"No se pudo leer el payload {payload_path}: {e}") from e
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"Payload de {len(payload)} bytes, la cabecera exige {expected} ({payload_path})"
        )

    array = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float64)
    return header, array


def _label_element_type(data: np.ndarray) -> str:
    top = float(data.max()) if data.size else 0.0
    if top <= np.iinfo(np.uint8).max:
        return "uint8"
    if top <= np.iinfo(np.int16).max:
        return "int16"
    return "float64"


def write_volume(vol: Volume, path: PathLike, element_type: Optional[str] = None):
    """Escribe un volumen en formato nativo (float64 para intensidades por defecto)"""
    if element_type is None:
        element_type = _label_element_type(vol.data) if vol.is_label else "float64"
    if element_type not in ELEMENT_TYPES:
        raise UnsupportedDatatypeError(f"Tipo de elemento no soportado: {element_type}")
    _write_native(path, vol.data, {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "kind": vol.kind,
        "components": 1,
        "meta": vol.meta,
    }, element_type)


def read_volume(path: PathLike, kind: Optional[str] = None) -> Volume:
    """
    Lee un volumen nativo o NIfTI-1

    Args:
        path: Ruta de la cabecera nativa o del archivo .nii/.nii.gz
        kind: Fuerza el tipo (intensity/label); por defecto el de la cabecera
    """
    if is_nifti(path):
        return read_nifti(path, kind or INTENSITY)

    header, array = _read_native(path)
    if int(header.get("components", 1)) != 1 or "fields" in header:
        raise VolumeFormatError(
            f"{path} tiene {header.get('components')} componentes; se esperaba un volumen escalar"
        )
    return Volume(array, header.get("spacing", (1.0, 1.0, 1.0)), header.get("origin", (0.0, 0.0, 0.0)),
                  kind or header.get("kind", INTENSITY), dict(header.get("meta") or {}))


def write_field(ddf: DisplacementField, path: PathLike):
    _write_native(path, ddf.vectors, {
        "dims": list(ddf.dims),
        "spacing": list(ddf.spacing),
        "kind": "displacement",
        "components": 3,
    }, "float64")


def read_field(path: PathLike) -> DisplacementField:
    header, array = _read_native(path)
    if int(header.get("components", 1)) != 3 or "fields" in header:
        raise VolumeFormatError(
            f"{path} tiene {header.get('components', 1)} componentes; un campo requiere 3"
        )
    return DisplacementField(array, header.get("spacing", (1.0, 1.0, 1.0)))


def write_segi(field: SegiField, path: PathLike):
    """Guarda los K campos de una SEGI en un único archivo nativo"""
    stacked = np.stack([f.vectors for f in field.fields])
    _write_native(path, stacked, {
        "dims": list(field.dims),
        "kind": "segi",
        "components": 3,
        "fields": len(field.fields),
        "sigmas": list(field.sigmas),
    }, "float64")


def read_segi(path: PathLike) -> SegiField:
    header, array = _read_native(path)
    if "fields" not in header or int(header.get("components", 1)) != 3:
        raise VolumeFormatError(f"{path} no contiene una SEGI")
    return SegiField(header.get("sigmas", []), tuple(VectorField(a) for a in array))


# ---------------------------------------------------------------------------
# NIfTI-1 (solo lectura)
# ---------------------------------------------------------------------------

SUPPORTED_NIFTI_TYPES = {"uint8", "int16", "float32", "float64"}


def read_nifti(path: PathLike, kind: str = INTENSITY) -> Volume:
    """
    Lee el subconjunto soportado de NIfTI-1 de un solo archivo

    Aplica scl_slope/scl_inter; la orientación se registra en `meta` pero no
    se remuestrea.
    """
    try:
        img = nib.load(str(path), mmap=False)
    except (ImageFileError, HeaderDataError, EOFError, ValueError, zlib.error) as e:
        logger.error(f"Error leyendo NIfTI {path}: {e}")
        raise VolumeFormatError(f"Cabecera NIfTI mal formada en {path}: {e}") from e
    except FileNotFoundError:
        raise
    except OSError as e:
        logger.error(f"Error leyendo NIfTI {path}: {e}")
        raise VolumeFormatError(f"No se pudo leer {path}: {e}") from e

    if not isinstance(img, nib.Nifti1Image) or isinstance(img, nib.Nifti2Image):
        raise VolumeFormatError(f"{path} no es un NIfTI-1 de un solo archivo")
    header = img.header
    magic = bytes(header["magic"]).rstrip(b"\x00")
    if magic != b"n+1":
        raise VolumeFormatError(f"Magic NIfTI inválido en {path}: {magic!r}")

    dtype = header.get_data_dtype()
    if dtype.name not in SUPPORTED_NIFTI_TYPES:
        raise UnsupportedDatatypeError(f"Tipo de dato NIfTI no soportado: {dtype.name}")

    shape = header.get_data_shape()
    if len(shape) < 3 or any(n != 1 for n in shape[3:]):
        raise VolumeFormatError(f"Solo se admiten volúmenes 3-D, forma {shape}")

    try:
        data = img.get_fdata(dtype=np.float64)
    except (OSError, EOFError, ValueError, zlib.error) as e:
        logger.error(f"Payload NIfTI truncado en {path}: {e}")
        raise TruncatedPayloadError(f"Payload NIfTI truncado o corrupto en {path}: {e}") from e
    data = data.reshape(shape[:3])

    zooms = tuple(float(z) for z in header.get_zooms()[:3])
    meta = {
        "source": "nifti1",
        "qform_code": int(header["qform_code"]),
        "sform_code": int(header["sform_code"]),
        "affine": np.asarray(img.affine, dtype=np.float64).tolist(),
    }
    return Volume(data, zooms, tuple(float(x) for x in img.affine[:3, 3]), kind, meta)
