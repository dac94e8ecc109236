"""
Interfaz de línea de comandos del motor de registro
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import LABEL, resample_to_grid, warp
from .errors import ConfigError, SegiRegError, ShapeMismatchError
from .evaluation import EvalReport, evaluate_labels
from .optim import PRESETS, POLARITIES, RegistrationConfig, register
from .overlay import PLANES, emit_overlay
from .phantom import PhantomSpec, generate_pair
from .segi import DEFAULT_EPS, segi
from .volume_io import (
    OUTPUT_DIR_ENV,
    atomic_write_text,
    read_field,
    read_volume,
    resolve_output_path,
    write_field,
    write_segi,
    write_volume,
)

logger = logging.getLogger(__name__)


def setup_logging(log_file: Optional[str] = None, verbose: bool = False):
    """Configura el logging del proceso (consola y, opcionalmente, archivo)"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Lista de números inválida: '{text}'")


def _parse_ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Lista de enteros inválida: '{text}'")


def build_config(args) -> RegistrationConfig:
    """Archivo de configuración, luego preset y finalmente las opciones explícitas"""
    cfg = RegistrationConfig.from_file(args.config) if args.config else RegistrationConfig()
    if args.preset:
        cfg = cfg.with_overrides(**PRESETS[args.preset])
    return cfg.with_overrides(
        sigmas=tuple(args.sigmas) if args.sigmas else None,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        levels=args.levels,
        iters_per_level=args.iters,
        step_size=args.step_size,
        seed=args.seed,
        symmetric_similarity=True if args.symmetric else None,
        intensity_polarity=args.polarity,
    )


def _log_field_summary(name: str, vectors: np.ndarray):
    magnitude = np.linalg.norm(vectors, axis=-1)
    logger.info(f"{name}: |d| medio={magnitude.mean():.4f} máximo={magnitude.max():.4f} vóxeles")


def cmd_register(args) -> int:
    moving = read_volume(args.moving)
    fixed = read_volume(args.fixed)
    if args.resample_to_fixed:
        moving = resample_to_grid(moving, fixed)
    elif moving.dims != fixed.dims:
        raise ShapeMismatchError(
            f"Las imágenes no comparten rejilla ({moving.dims} vs {fixed.dims}); "
            f"usar --resample-to-fixed", stage="register"
        )

    cfg = build_config(args)
    logger.info(f"Registrando {args.moving} -> {args.fixed} con {json.dumps(cfg.to_dict())}")
    u, v, trace = register(moving, fixed, cfg)

    write_field(u, resolve_output_path(args.out_ddf_forward))
    write_field(v, resolve_output_path(args.out_ddf_backward))
    write_volume(warp(moving, u), resolve_output_path(args.out_moved))
    if args.trace:
        atomic_write_text(resolve_output_path(args.trace), trace.to_jsonl())

    _log_field_summary("U", u.vectors)
    _log_field_summary("V", v.vectors)
    logger.info(f"Registro completado: pérdida final {trace.records[-1].loss.total:.6f}")
    return 0


def cmd_warp(args) -> int:
    vol = read_volume(args.input, kind=LABEL if args.nearest else None)
    ddf = read_field(args.ddf)
    write_volume(warp(vol, ddf), resolve_output_path(args.out))
    return 0


def _write_report(report: EvalReport, out) -> Path:
    path = resolve_output_path(out)
    atomic_write_text(path, report.format_table())
    atomic_write_text(Path(str(path) + ".json"),
                      json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def cmd_eval(args) -> int:
    a = read_volume(args.a, kind=LABEL)
    b = read_volume(args.b, kind=LABEL)
    ids = args.ids or sorted(set(a.label_ids()) | set(b.label_ids()))
    report = evaluate_labels(a, b, ids)
    path = _write_report(report, args.out)
    print(report.format_table(), end="")
    logger.info(f"Reporte escrito en {path}")
    return 0


def cmd_phantom(args) -> int:
    values = {}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as f:
            values = json.load(f)
    spec = PhantomSpec.from_dict(values)
    pair = generate_pair(spec)

    out_dir = Path(args.out_dir)
    write_volume(pair.moving, resolve_output_path(out_dir / "moving.json"))
    write_volume(pair.fixed, resolve_output_path(out_dir / "fixed.json"))
    write_volume(pair.moving_label, resolve_output_path(out_dir / "moving_label.json"))
    write_volume(pair.fixed_label, resolve_output_path(out_dir / "fixed_label.json"))
    write_field(pair.truth, resolve_output_path(out_dir / "truth.json"))
    return 0


def cmd_segi_dump(args) -> int:
    vol = read_volume(args.input)
    write_segi(segi(vol, args.sigmas, args.eps), resolve_output_path(args.out))
    return 0


def cmd_overlay(args) -> int:
    fixed = read_volume(args.fixed)
    labels = [read_volume(path, kind=LABEL) for path in args.labels]
    emit_overlay(fixed, labels, args.plane, args.index, resolve_output_path(args.out))
    return 0


def cmd_batch(args) -> int:
    """Registra y evalúa cada par del manifiesto; los pares que fallan no detienen el lote"""
    manifest_path = Path(args.manifest)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    pairs = manifest.get("pairs") if isinstance(manifest, dict) else None
    if not pairs:
        raise ConfigError(f"El manifiesto {manifest_path} no lista pares", stage="batch")

    cfg = build_config(args)
    root = manifest_path.parent
    out_dir = Path(args.out_dir)
    reports = []
    failed = []

    for position, pair in enumerate(pairs):
        name = str(pair.get("name", f"pair{position:03d}"))
        try:
            moving = read_volume(root / pair["moving"])
            fixed = read_volume(root / pair["fixed"])
            moving_label = read_volume(root / pair["moving_label"], kind=LABEL)
            fixed_label = read_volume(root / pair["fixed_label"], kind=LABEL)

            u, v, trace = register(moving, fixed, cfg)
            moved_label = warp(moving_label, u)

            case_dir = out_dir / name
            write_field(u, resolve_output_path(case_dir / "ddf_forward.json"))
            write_field(v, resolve_output_path(case_dir / "ddf_backward.json"))
            write_volume(moved_label, resolve_output_path(case_dir / "moved_label.json"))
            atomic_write_text(resolve_output_path(case_dir / "trace.jsonl"), trace.to_jsonl())

            ids = pair.get("ids") or fixed_label.label_ids()
            reports.append(evaluate_labels(moved_label, fixed_label, ids, case=name))
            logger.info(f"Par {name} procesado")

        except (SegiRegError, OSError, KeyError, TypeError, ValueError) as e:
            logger.error(f"Error procesando par {name}: {e}")
            failed.append(name)

    if reports:
        report = EvalReport.merge(reports)
        _write_report(report, out_dir / "report.txt")
        print(report.format_table(), end="")

    if failed:
        print(f"error [batch]: {len(failed)} de {len(pairs)} pares fallaron: {', '.join(failed)}",
              file=sys.stderr)
        return 1
    return 0


def _add_config_options(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='Archivo JSON con los campos de RegistrationConfig')
    parser.add_argument('--preset', choices=sorted(PRESETS),
                        help='Ajuste experimental (cardiac: lambda2=10, abdominal: lambda2=1)')
    parser.add_argument('--sigmas', type=_parse_floats, help='Escalas SEGI, p. ej. 1,1.5,3')
    parser.add_argument('--lambda1', type=float, help='Peso de la consistencia cíclica (0.1)')
    parser.add_argument('--lambda2', type=float, help='Peso de la suavidad (1)')
    parser.add_argument('--levels', type=int, help='Niveles de la pirámide (3)')
    parser.add_argument('--iters', type=int, help='Iteraciones por nivel (200)')
    parser.add_argument('--step-size', type=float, help='Paso de Adam en vóxeles (0.05)')
    parser.add_argument('--seed', type=int, help='Semilla registrada en la traza')
    parser.add_argument('--symmetric', action='store_true',
                        help='Añade el término de similitud hacia atrás')
    parser.add_argument('--polarity', choices=POLARITIES, help='Polaridad de contraste (auto)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='segireg',
        description='Registro deformable multimodalidad con información de gradiente '
                    'codificada espacialmente',
        epilog=f'Las rutas de salida relativas se resuelven contra ${OUTPUT_DIR_ENV} si está definida.',
    )
    parser.add_argument('--log-file', help='Archivo de log adicional')
    parser.add_argument('--verbose', action='store_true', help='Log por iteración (DEBUG)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('register', help='Registra una imagen móvil sobre una fija')
    p.add_argument('--moving', required=True)
    p.add_argument('--fixed', required=True)
    p.add_argument('--out-ddf-forward', required=True)
    p.add_argument('--out-ddf-backward', required=True)
    p.add_argument('--out-moved', required=True)
    p.add_argument('--trace', help='Traza de optimización en JSON por líneas')
    p.add_argument('--resample-to-fixed', action='store_true',
                   help='Remuestrea la imagen móvil a la rejilla de la fija')
    _add_config_options(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser('warp', help='Aplica un campo de desplazamiento a un volumen')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--ddf', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--nearest', action='store_true', help='Vecino más cercano (etiquetas)')
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser('eval', help='Dice y ASD por estructura')
    p.add_argument('--a', required=True)
    p.add_argument('--b', required=True)
    p.add_argument('--ids', type=_parse_ints, help='Estructuras a evaluar, p. ej. 1,2')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('phantom', help='Genera un par sintético')
    p.add_argument('--spec', help='Archivo JSON con los campos de PhantomSpec')
    p.add_argument('--out-dir', default='phantom')
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser('segi-dump', help='Escribe la SEGI de un volumen')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--sigmas', type=_parse_floats, default=[1.0, 1.5, 3.0])
    p.add_argument('--eps', type=float, default=DEFAULT_EPS)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_segi_dump)

    p = sub.add_parser('overlay', help='Corte con contornos de etiquetas (PPM)')
    p.add_argument('--fixed', required=True)
    p.add_argument('--labels', type=lambda s: [x for x in s.split(',') if x], default=[])
    p.add_argument('--plane', choices=sorted(PLANES), default='axial')
    p.add_argument('--index', type=int, required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser('batch', help='Registra y evalúa los pares de un manifiesto')
    p.add_argument('--manifest', required=True)
    p.add_argument('--out-dir', default='batch')
    _add_config_options(p)
    p.set_defaults(func=cmd_batch)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Función principal; devuelve el código de salida"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file, args.verbose)

    try:
        return args.func(args)
    except SegiRegError as e:
        logger.error(f"Error en la etapa {e.stage}: {e}")
        print(f"error [{e.stage}]: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error de entrada/salida: {e}")
        print(f"error [io]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
