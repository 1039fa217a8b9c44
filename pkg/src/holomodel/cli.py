"""Command line entry point: ``holomodel <command> --config <file> [--out <dir>] [--seed <n>]``.

Every run writes ``<command>_report.json`` into the output directory.  The
``backward`` command also writes ``backward_orbit.csv``.  Exit status is 0
on success, 2 when a limit construction or a preimage search fails (the
report still records the error), and 1 for configuration errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backward_model import backward_orbit, backward_rate_mu, backward_step_sigma, canonical_pre_model, verify_pre_model
from .dynamics import DEFAULT_TOL, Tolerances, classify_map
from .errors import ConfigError, HolomodelError, IoError, ModelNotConverged, NewtonFailed, StepUnbounded
from .forward_model import canonical_semi_model, default_grid, valiron_map, verify_semi_model
from .geometry import DomainSpec
from .holomap import MapExpr, map_from_strings, validate_self_map

COMMANDS = ("classify", "forward", "backward", "valiron", "verify")
REPORT_DIR_ENV = "HOLOMODEL_REPORT_DIR"
MODEL_TOLERANCES = {"limit_tol": 1e-10, "svd_tol": 1e-4}


# ------------------------------------------------------------------ config


def _point(value, name: str, dim: int) -> np.ndarray:
    """Accept numbers, ``[re, im]`` pairs or strings like ``"0.5+0.1j"`` per coordinate."""
    if not isinstance(value, list):
        value = [value]
    out = []
    for i, c in enumerate(value):
        try:
            if isinstance(c, list):
                if len(c) != 2:
                    raise ValueError
                out.append(complex(float(c[0]), float(c[1])))
            elif isinstance(c, str):
                out.append(complex(c.replace(" ", "")))
            else:
                out.append(complex(float(c)))
        except (TypeError, ValueError):
            raise ConfigError(f"coordinate {i} is not a number, [re, im] pair or complex string", name) from None
    if len(out) != dim:
        raise ConfigError(f"expected {dim} coordinates, got {len(out)}", name)
    return np.array(out, dtype=np.complex128)


def _map(data) -> MapExpr:
    if not isinstance(data, dict):
        raise ConfigError("must be an object", "map")
    if "domain" not in data:
        raise ConfigError("missing 'domain'", "map.domain")
    try:
        dom = DomainSpec(data["domain"]["kind"], data["domain"]["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid domain ({exc})", "map.domain") from None
    try:
        if "expressions" in data:
            return map_from_strings(data["expressions"], dom, data.get("label"))
        if "components" in data:
            return MapExpr.from_json(data)
    except (KeyError, TypeError, ValueError, SyntaxError, HolomodelError) as exc:
        raise ConfigError(f"cannot build the map ({exc})", "map.components") from None
    raise ConfigError("needs 'components' or 'expressions'", "map")


@dataclass
class JobConfig:
    command: str
    f: MapExpr
    base_point: np.ndarray | None = None
    zeta: np.ndarray | None = None
    orbit_start: np.ndarray | None = None
    tolerances: Tolerances = DEFAULT_TOL
    model_tolerances: dict = field(default_factory=lambda: dict(MODEL_TOLERANCES))
    horizon: int | None = None
    seed: int = 0
    out_dir: Path = Path(".")
    raw: dict = field(default_factory=dict, repr=False)


REQUIRED = {
    "classify": (),
    "forward": (),
    "valiron": (),
    "backward": ("zeta", "orbit_start"),
    "verify": (),
}


def load_config(path, command: str, out_dir=None, seed=None) -> JobConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "command")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", "config") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "config") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", "config")
    if "map" not in raw:
        raise ConfigError("missing", "map")
    f = _map(raw["map"])
    q = f.dim
    for name in REQUIRED[command]:
        if name not in raw:
            raise ConfigError(f"required by '{command}'", name)
    cfg = JobConfig(command, f, raw=raw)
    for name in ("base_point", "zeta", "orbit_start"):
        if name in raw:
            setattr(cfg, name, _point(raw[name], name, q))
    tol_raw = raw.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        raise ConfigError("must be an object", "tolerances")
    dyn, model = {}, dict(MODEL_TOLERANCES)
    for key, val in tol_raw.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
            raise ConfigError("must be a positive number", f"tolerances.{key}")
        if key in Tolerances.__dataclass_fields__:
            kind = Tolerances.__dataclass_fields__[key].type
            dyn[key] = int(val) if kind in ("int", int) else float(val)
        elif key in MODEL_TOLERANCES:
            model[key] = float(val)
        else:
            raise ConfigError("unknown tolerance", f"tolerances.{key}")
    cfg.tolerances = DEFAULT_TOL.replace(**dyn)
    cfg.model_tolerances = model
    if "horizon" in raw:
        if not isinstance(raw["horizon"], int) or raw["horizon"] < 1:
            raise ConfigError("must be a positive integer", "horizon")
        cfg.horizon = raw["horizon"]
    s = raw.get("seed", 0) if seed is None else seed
    if not isinstance(s, int) or not 0 <= s < 2 ** 64:
        raise ConfigError("must be an unsigned 64-bit integer", "seed")
    cfg.seed = s
    env_dir = os.environ.get(REPORT_DIR_ENV)
    cfg.out_dir = Path(out_dir if out_dir is not None else (env_dir or raw.get("out", ".")))
    for name in ("base_point", "orbit_start"):
        p = getattr(cfg, name)
        if p is not None and not f.domain.contains(p):
            raise ConfigError("point is not in the domain", name)
    return cfg


# ----------------------------------------------------------------- reports


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def to_plain(obj):
    """Convert numpy scalars/arrays, complex numbers and dataclass reports into JSON-ready values."""
    if hasattr(obj, "to_json"):
        return to_plain(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _has_dict(obj) -> bool:
    if isinstance(obj, dict):
        return True
    return isinstance(obj, list) and any(_has_dict(v) for v in obj)


def _dump(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dump(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if not _has_dict(obj):
            return "[" + ", ".join(_dump(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj)


def dumps_report(result) -> str:
    """Deterministic JSON text: insertion-ordered keys, floats with 17 significant digits."""
    return _dump(to_plain(result)) + "\n"


def emit_report(result, path) -> None:
    path = Path(path)
    text = dumps_report(result)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(path, f"cannot write report {path}: {exc.strerror}") from None


# ---------------------------------------------------------------- commands


def _base(cfg: JobConfig) -> np.ndarray:
    return cfg.base_point if cfg.base_point is not None else np.zeros(cfg.f.dim, dtype=np.complex128)


def _classify(cfg: JobConfig) -> dict:
    rep = classify_map(cfg.f, cfg.tolerances, seed=cfg.seed)
    return rep.to_json()


def _semi_model(cfg: JobConfig):
    return canonical_semi_model(
        cfg.f, _base(cfg), tol=cfg.model_tolerances["limit_tol"], N=cfg.horizon or 1000,
        tolerances=cfg.tolerances, svd_tol=cfg.model_tolerances["svd_tol"], seed=cfg.seed,
    )


def _forward(cfg: JobConfig) -> dict:
    model = _semi_model(cfg)
    out = {"base_point": _base(cfg), "model": model.to_json()}
    if model.retract_dim:
        out["verification"] = verify_semi_model(cfg.f, model, seed=cfg.seed).to_json()
    return out


def _valiron(cfg: JobConfig) -> dict:
    model = _semi_model(cfg)
    theta = valiron_map(model)
    grid = default_grid(cfg.f, seed=cfg.seed)
    residual = theta.residual(cfg.f, grid)
    im_min = min(theta(x).imag for x in grid)
    return {
        "base_point": _base(cfg),
        "lambda": model.lam,
        "residual": residual,
        "min_im_theta": im_min,
        "grid_size": len(grid),
        "theta_at_base": theta(_base(cfg)),
        "horizon": model.horizon,
        "tol": cfg.model_tolerances["limit_tol"],
    }


def _backward(cfg: JobConfig) -> dict:
    orbit = backward_orbit(cfg.f, cfg.orbit_start, cfg.zeta, N=cfg.horizon or 40)
    with open(cfg.out_dir / "backward_orbit.csv", "w", encoding="utf-8", newline="\n") as fh:
        orbit.to_csv(fh)
    sigma = backward_step_sigma(orbit, 1)
    mu = backward_rate_mu(orbit)
    model = canonical_pre_model(cfg.f, orbit, tol=cfg.model_tolerances["limit_tol"],
                                svd_tol=cfg.model_tolerances["svd_tol"], seed=cfg.seed)
    return {
        "orbit_start": cfg.orbit_start,
        "zeta": cfg.zeta,
        "orbit_length": len(orbit),
        "step_bound": orbit.bound,
        "step_cap": orbit.step_cap,
        "dilation": orbit.lam,
        "sigma_1": {"value": sigma.value, "index": sigma.index, "converged": sigma.converged},
        "mu": {"value": mu.value, "m_used": mu.m_used, "tail": list(mu.tail)},
        "model": model.to_json(),
        "verification": verify_pre_model(cfg.f, model, seed=cfg.seed).to_json(),
    }


def _verify(cfg: JobConfig) -> dict:
    out = {"self_map": validate_self_map(cfg.f, seed=cfg.seed).to_json()}
    if cfg.zeta is not None and cfg.orbit_start is not None:
        orbit = backward_orbit(cfg.f, cfg.orbit_start, cfg.zeta, N=cfg.horizon or 40)
        model = canonical_pre_model(cfg.f, orbit, tol=cfg.model_tolerances["limit_tol"], seed=cfg.seed)
        out["pre_model"] = verify_pre_model(cfg.f, model, seed=cfg.seed).to_json()
    else:
        model = _semi_model(cfg)
        out["semi_model"] = verify_semi_model(cfg.f, model, seed=cfg.seed).to_json()
    return out


HANDLERS = {"classify": _classify, "forward": _forward, "backward": _backward, "valiron": _valiron, "verify": _verify}


def run_command(cfg: JobConfig) -> int:
    """Run one job, write its report and return the exit status."""
    np.random.seed(cfg.seed % 2 ** 32)
    report = {
        "command": cfg.command,
        "map": cfg.f.to_json(),
        "seed": cfg.seed,
        "tolerances": dict(cfg.tolerances.__dict__, **cfg.model_tolerances),
        "horizon": cfg.horizon,
    }
    status = 0
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        report["result"] = HANDLERS[cfg.command](cfg)
        report["error"] = None
    except (ModelNotConverged, NewtonFailed, StepUnbounded) as exc:
        report["result"] = None
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        conv = getattr(exc, "report", None)
        if conv is not None:
            report["error"]["convergence"] = conv
        status = 2
    except HolomodelError as exc:
        report["result"] = None
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        status = 1
    emit_report(report, cfg.out_dir / f"{cfg.command}_report.json")
    if report["error"] is not None:
        print(f"holomodel: {report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="holomodel", description="Canonical models for holomorphic iteration.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON job configuration")
    parser.add_argument("--out", default=None, help="report directory")
    parser.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.out, args.seed)
    except ConfigError as exc:
        print(f"holomodel: config error: {exc}", file=sys.stderr)
        return 1
    try:
        return run_command(cfg)
    except IoError as exc:
        print(f"holomodel: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
