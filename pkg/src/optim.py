"""
Optimización directa de los campos (U, V) por instancia

Sustituye a la red de registro: minimiza la pérdida total con Adam, usando el
gradiente exacto obtenido por acumulación inversa a través de los adjuntos de
cada etapa (warp trilineal, diferencias finitas, normalización, suavizado
gaussiano y coseno), sobre una pirámide de resolución gruesa a fina.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import filters
from .core import (
    DisplacementField,
    Volume,
    check_same_dims,
    identity_grid,
    interpolate,
    interpolate_gradient,
    minmax_normalize,
    resample_pyramid,
    scatter,
    trilinear_stencil,
    upsample_field,
)
from .errors import ConfigError, DivergenceError, NonFiniteError
from .losses import LossBreakdown, smoothness, smoothness_gradient
from .segi import SegiTape, cosine_adjoint, cosine_map, normalize_adjoint, segi_forward

logger = logging.getLogger(__name__)

POLARITIES = ("auto", "positive", "negative")

# Ajustes experimentales: corazón (MR->CT) y abdomen (T1/T2->CT)
PRESETS: Dict[str, Dict[str, float]] = {
    "cardiac": {"lambda1": 0.1, "lambda2": 10.0},
    "abdominal": {"lambda1": 0.1, "lambda2": 1.0},
}


@dataclass(frozen=True)
class RegistrationConfig:
    """Hiperparámetros del registro; los valores por defecto son los del ajuste abdominal"""

    sigmas: Tuple[float, ...] = (1.0, 1.5, 3.0)
    lambda1: float = 0.1
    lambda2: float = 1.0
    levels: int = 3
    iters_per_level: int = 200
    step_size: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_eps: float = 1e-6
    symmetric_similarity: bool = False
    intensity_polarity: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sigmas, str):
            raise ConfigError(f"sigmas debe ser una lista de números: '{self.sigmas}'")
        try:
            object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
            for name in ("lambda1", "lambda2", "step_size", "beta1", "beta2", "adam_eps", "grad_eps"):
                object.__setattr__(self, name, float(getattr(self, name)))
            for name in ("levels", "iters_per_level", "seed"):
                object.__setattr__(self, name, int(getattr(self, name)))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Tipo inválido en la configuración: {e}") from e
        if not isinstance(self.symmetric_similarity, bool):
            raise ConfigError(f"symmetric_similarity debe ser booleano: {self.symmetric_similarity!r}")

        if not self.sigmas or any(not (s > 0) for s in self.sigmas):
            raise ConfigError(f"sigmas debe ser no vacío y positivo: {self.sigmas}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"Los pesos lambda deben ser >= 0: {self.lambda1}, {self.lambda2}")
        if self.levels < 1:
            raise ConfigError(f"levels debe ser >= 1: {self.levels}")
        if self.iters_per_level < 1:
            raise ConfigError(f"iters_per_level debe ser >= 1: {self.iters_per_level}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size debe ser positivo: {self.step_size}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"beta1/beta2 fuera de [0, 1): {self.beta1}, {self.beta2}")
        if not (self.adam_eps > 0 and self.grad_eps > 0):
            raise ConfigError("adam_eps y grad_eps deben ser positivos")
        if self.intensity_polarity not in POLARITIES:
            raise ConfigError(f"intensity_polarity debe ser uno de {POLARITIES}")

    @classmethod
    def from_dict(cls, values: Dict) -> "RegistrationConfig":
        if not isinstance(values, dict):
            raise ConfigError(f"La configuración debe ser un objeto JSON: {values!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Claves de configuración desconocidas: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "RegistrationConfig":
        """Lee un archivo JSON que replica los campos de la configuración"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error leyendo configuración {path}: {e}")
            raise ConfigError(f"No se pudo leer la configuración {path}: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"La configuración {path} debe ser un objeto JSON")
        return cls.from_dict(values)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RegistrationConfig":
        if name not in PRESETS:
            raise ConfigError(f"Preset desconocido '{name}', opciones: {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    def with_overrides(self, **overrides) -> "RegistrationConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict:
        values = asdict(self)
        values["sigmas"] = list(self.sigmas)
        return values


@dataclass(frozen=True)
class TraceRecord:
    level: int
    iteration: int
    loss: LossBreakdown
    max_displacement: float
    step_size: float

    def to_dict(self) -> Dict:
        return {
            "level": self.level,
            "iteration": self.iteration,
            **self.loss.to_dict(),
            "max_displacement": self.max_displacement,
            "step_size": self.step_size,
        }


@dataclass
class OptimizationTrace:
    """
    Registro por iteración de la optimización

    Con polaridad "negative" el término l_sg (y por tanto total) se mide sobre la
    móvil invertida 1 - M, que es la que ve la similitud; l_cc usa siempre M.
    """

    records: List[TraceRecord] = field(default_factory=list)
    polarity: str = "positive"
    seed: int = 0

    def append(self, record: TraceRecord):
        last = self._last_of_level(record.level)
        if last is not None and record.iteration <= last.iteration:
            raise ValueError(
                f"Iteración {record.iteration} no creciente en el nivel {record.level}"
            )
        self.records.append(record)

    def _last_of_level(self, level: int) -> Optional[TraceRecord]:
        for record in reversed(self.records):
            if record.level == level:
                return record
        return None

    def totals(self, level: Optional[int] = None) -> List[float]:
        return [r.loss.total for r in self.records if level is None or r.level == level]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def __len__(self):
        return len(self.records)


class Adam:
    """Adam estándar sobre un diccionario de arreglos, actualizado in situ"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        for name in params:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


# ---------------------------------------------------------------------------
# Gradiente exacto de la pérdida total
# ---------------------------------------------------------------------------

def _require_finite(arr, stage: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"Valor no finito en la etapa '{stage}'", stage=stage)


def _similarity_backward(moved: SegiTape, target: SegiTape, sigmas: Sequence[float],
                         eps: float, weight: float) -> Tuple[float, np.ndarray]:
    """
    L_SG entre la SEGI de la imagen movida y la de referencia, y su adjunto
    respecto de las intensidades de la imagen movida
    """
    k = len(sigmas)
    n = moved.norm.size
    per_scale = []
    normalized_bar = np.zeros_like(moved.normalized)

    for sigma, a, b in zip(sigmas, moved.smoothed, target.smoothed):
        per_scale.append(-float(np.mean(cosine_map(a, b, eps))))
        smoothed_bar = (-weight / (k * n)) * cosine_adjoint(a, b, eps)
        normalized_bar += filters.smooth_adjoint(smoothed_bar, sigma)
    _require_finite(normalized_bar, "smoothing")

    gradient_bar = normalize_adjoint(moved.norm, moved.normalized, normalized_bar, eps)
    _require_finite(gradient_bar, "normalization")

    data_bar = filters.gradient_adjoint(gradient_bar)
    _require_finite(data_bar, "image-gradient")
    return float(np.mean(per_scale)), data_bar


def _evaluate(similarity_moving: np.ndarray, cycle_moving: np.ndarray, fixed: np.ndarray,
              u: np.ndarray, v: np.ndarray, cfg: RegistrationConfig,
              fixed_tape: Optional[SegiTape] = None,
              moving_tape: Optional[SegiTape] = None) -> Tuple[LossBreakdown, np.ndarray, np.ndarray]:
    dims = fixed.shape
    n = fixed.size
    grid = identity_grid(dims)
    eps = cfg.grad_eps

    stencil_u = trilinear_stencil(dims, grid + u)
    stencil_v = trilinear_stencil(dims, grid + v)

    # L_SG hacia adelante: SEGI(I_m o U) contra SEGI(I_f)
    if fixed_tape is None:
        fixed_tape = segi_forward(fixed, cfg.sigmas, eps)
    moved = interpolate(similarity_moving, stencil_u).reshape(dims)
    weight = 0.5 if cfg.symmetric_similarity else 1.0
    l_sg, moved_bar = _similarity_backward(
        segi_forward(moved, cfg.sigmas, eps), fixed_tape, cfg.sigmas, eps, weight
    )
    grad_u = moved_bar.reshape(-1, 1) * interpolate_gradient(similarity_moving, stencil_u)
    grad_v = np.zeros_like(grad_u)

    if cfg.symmetric_similarity:
        if moving_tape is None:
            moving_tape = segi_forward(similarity_moving, cfg.sigmas, eps)
        moved_fixed = interpolate(fixed, stencil_v).reshape(dims)
        l_back, moved_fixed_bar = _similarity_backward(
            segi_forward(moved_fixed, cfg.sigmas, eps), moving_tape, cfg.sigmas, eps, weight
        )
        grad_v += moved_fixed_bar.reshape(-1, 1) * interpolate_gradient(fixed, stencil_v)
        l_sg = 0.5 * (l_sg + l_back)

    # L_CC: ((I_m o U) o V) frente a I_m, norma L1 media
    warped = interpolate(cycle_moving, stencil_u).reshape(dims)
    restored = interpolate(warped, stencil_v).reshape(dims)
    residual = restored - cycle_moving
    l_cc = float(np.mean(np.abs(residual)))

    if cfg.lambda1 != 0.0:
        residual_bar = (cfg.lambda1 / n) * np.sign(residual).reshape(-1)
        grad_v += residual_bar.reshape(-1, 1) * interpolate_gradient(warped, stencil_v)
        warped_bar = scatter(residual_bar, stencil_v)
        grad_u += warped_bar.reshape(-1, 1) * interpolate_gradient(cycle_moving, stencil_u)
        _require_finite(warped_bar, "cycle")

    grad_u = grad_u.reshape(u.shape)
    grad_v = grad_v.reshape(v.shape)
    _require_finite(grad_u, "warp")
    _require_finite(grad_v, "warp")

    # Psi(U) + Psi(V)
    psi_u = smoothness(DisplacementField(u))
    psi_v = smoothness(DisplacementField(v))
    if cfg.lambda2 != 0.0:
        grad_u += cfg.lambda2 * smoothness_gradient(u)
        grad_v += cfg.lambda2 * smoothness_gradient(v)

    breakdown = LossBreakdown.assemble(l_sg, l_cc, psi_u, psi_v, cfg.lambda1, cfg.lambda2)
    return breakdown, grad_u, grad_v


def loss_gradient(moving: Volume, fixed: Volume, u: DisplacementField, v: DisplacementField,
                  cfg: RegistrationConfig) -> Tuple[float, DisplacementField, DisplacementField]:
    """
    Valor de la pérdida total y su gradiente exacto respecto de cada componente de U y V

    Returns:
        (total, dL/dU, dL/dV)
    """
    check_same_dims(moving, fixed, "imágenes")
    check_same_dims(moving, u, "volumen y campo U")
    check_same_dims(moving, v, "volumen y campo V")

    breakdown, grad_u, grad_v = _evaluate(moving.data, moving.data, fixed.data,
                                          u.vectors, v.vectors, cfg)
    return (breakdown.total, DisplacementField(grad_u, u.spacing),
            DisplacementField(grad_v, v.spacing))


# ---------------------------------------------------------------------------
# Registro multirresolución
# ---------------------------------------------------------------------------

def _similarity_at_identity(moving: np.ndarray, fixed_tape: SegiTape,
                            cfg: RegistrationConfig) -> float:
    tape = segi_forward(moving, cfg.sigmas, cfg.grad_eps)
    return float(np.mean([-float(np.mean(cosine_map(a, b, cfg.grad_eps)))
                          for a, b in zip(tape.smoothed, fixed_tape.smoothed)]))


def _resolve_polarity(moving: np.ndarray, fixed: np.ndarray, cfg: RegistrationConfig) -> str:
    if cfg.intensity_polarity != "auto":
        return cfg.intensity_polarity

    fixed_tape = segi_forward(fixed, cfg.sigmas, cfg.grad_eps)
    positive = _similarity_at_identity(moving, fixed_tape, cfg)
    negative = _similarity_at_identity(1.0 - moving, fixed_tape, cfg)
    polarity = "negative" if negative < positive else "positive"
    logger.info(f"Polaridad de contraste: {polarity} (L_SG {positive:.4f} vs invertida {negative:.4f})")
    return polarity


def register(moving: Volume, fixed: Volume,
             cfg: RegistrationConfig) -> Tuple[DisplacementField, DisplacementField, OptimizationTrace]:
    """
    Registra `moving` sobre `fixed` optimizando U y V conjuntamente

    Args:
        moving: Imagen móvil, ya en la rejilla de la fija
        fixed: Imagen fija
        cfg: Configuración del registro

    Returns:
        (U, V, traza) a resolución completa
    """
    check_same_dims(moving, fixed, "imágenes")
    moving_pyramid = resample_pyramid(minmax_normalize(moving), cfg.levels)
    fixed_pyramid = resample_pyramid(minmax_normalize(fixed), cfg.levels)

    coarsest = cfg.levels - 1
    polarity = _resolve_polarity(moving_pyramid[coarsest].data, fixed_pyramid[coarsest].data, cfg)
    trace = OptimizationTrace(polarity=polarity, seed=cfg.seed)

    u = DisplacementField.zeros(moving_pyramid[coarsest].dims, moving_pyramid[coarsest].spacing)
    v = DisplacementField.zeros(u.dims, u.spacing)

    for level in range(coarsest, -1, -1):
        cycle_moving = moving_pyramid[level].data
        similarity_moving = 1.0 - cycle_moving if polarity == "negative" else cycle_moving
        fixed_data = fixed_pyramid[level].data

        if level != coarsest:
            u = upsample_field(u, fixed_data.shape)
            v = upsample_field(v, fixed_data.shape)

        logger.info(f"Nivel {level}: rejilla {fixed_data.shape}, {cfg.iters_per_level} iteraciones")
        fixed_tape = segi_forward(fixed_data, cfg.sigmas, cfg.grad_eps)
        moving_tape = (segi_forward(similarity_moving, cfg.sigmas, cfg.grad_eps)
                       if cfg.symmetric_similarity else None)

        params = {"u": np.array(u.vectors), "v": np.array(v.vectors)}
        adam = Adam(cfg.step_size, cfg.beta1, cfg.beta2, cfg.adam_eps)

        for iteration in range(cfg.iters_per_level):
            try:
                breakdown, grad_u, grad_v = _evaluate(
                    similarity_moving, cycle_moving, fixed_data, params["u"], params["v"], cfg,
                    fixed_tape, moving_tape,
                )
            except NonFiniteError as e:
                logger.error(f"Divergencia en nivel {level}, iteración {iteration}: {e}")
                raise DivergenceError(
                    f"La optimización divergió en el nivel {level}, iteración {iteration}: {e}",
                    trace=trace,
                ) from e

            max_disp = float(max(np.linalg.norm(params["u"], axis=-1).max(),
                                 np.linalg.norm(params["v"], axis=-1).max()))
            trace.append(TraceRecord(level, iteration, breakdown, max_disp, cfg.step_size))
            logger.debug(f"nivel={level} it={iteration} total={breakdown.total:.6f} "
                         f"l_sg={breakdown.l_sg:.6f} l_cc={breakdown.l_cc:.6f}")

            adam.step(params, {"u": grad_u, "v": grad_v})
            if not (np.all(np.isfinite(params["u"])) and np.all(np.isfinite(params["v"]))):
                raise DivergenceError(
                    f"Campos no finitos tras el paso {iteration} del nivel {level}", trace=trace
                )

        u = DisplacementField(params["u"], u.spacing)
        v = DisplacementField(params["v"], v.spacing)
        logger.info(f"Nivel {level} completado: pérdida total {trace.records[-1].loss.total:.6f}")

    return (DisplacementField(u.vectors, moving.spacing),
            DisplacementField(v.vectors, moving.spacing),
            trace)
