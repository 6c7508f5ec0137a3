"""Command line driver: ``emclt run``, ``emclt rerun``, ``emclt list-presets``.

A run reads one TOML config, executes a single experiment and writes
``results.csv``, ``summary.json`` and ``manifest.json`` to the output
directory.  Exit status: 0 on success, 2 when ``--check`` is set and an
acceptance threshold is violated, 1 on any error (partial outputs removed).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .models import PRESETS, ModelError, build_model, list_presets
from .parallel import THREADS_ENV, default_threads

EXPERIMENTS = ("strong-rate", "quadrature", "qx-stability", "clt-holder", "clt-sobolev",
               "zvonkin-sweep", "area-check")

# run-section keys accepted per experiment, with defaults
RUN_DEFAULTS = {
    "strong-rate": {"ns": [16, 32, 64, 128, 256, 512, 1024], "M": 64, "n_paths": 10_000, "p": 2.0},
    "quadrature": {"ns": [16, 32, 64, 128, 256, 512, 1024], "M": 64, "n_paths": 10_000, "p": 2.0,
                   "f": "holder-lacunary", "g": "one"},
    "qx-stability": {"n_fine": 2**16, "n": 1024, "n_paths": 64, "deltas": None},
    "clt-holder": {"ns": [16, 64, 256, 512], "M": 64, "n_paths": 10_000, "limit_steps": 2**14,
                   "times": [0.25, 0.5, 1.0], "delta": None, "theta": 4.0},
    "clt-sobolev": {"ns": [16, 64, 256, 512], "M": 64, "n_paths": 10_000, "limit_steps": 2**14,
                    "times": [0.25, 0.5, 1.0], "theta": 4.0, "R": 12.0, "Nx": 2400, "Nt": 400},
    "zvonkin-sweep": {"thetas": [4.0, 16.0, 64.0, 256.0], "R": 12.0, "Nx": 2400, "Nt": 400},
    "area-check": {"n": 8, "Ms": [16, 64, 256], "n_paths": 2_000, "var_n": 8, "var_M": 256,
                   "var_paths": 100_000},
}

MODEL_DEFAULTS = {"drift": "smooth-tanh", "diffusion": "sin-modulated", "d": 1, "x0": None, "lam": None,
                  "drift_params": {}, "diffusion_params": {}}

CHECK_KEYS = {"slope_min", "slope_max", "r_squared_min", "ratio_max", "seminorm_ratio_max",
              "var_tol", "trend"}


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: str | None = None
    model: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _need(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _increasing(path, values, positive=True):
    _need(isinstance(values, list) and values, path, "must be a non-empty list")
    for i, v in enumerate(values):
        _need(_is_num(v), f"{path}[{i}]", "must be a number")
        if positive:
            _need(v > 0, f"{path}[{i}]", "must be positive")
    _need(all(b > a for a, b in zip(values, values[1:])), path,
          f"{path.split('.')[-1]} must be increasing")


def validate(raw: dict) -> ExperimentConfig:
    """Check a parsed config against the schema and fill in defaults."""
    _need(isinstance(raw, dict), "<root>", "config must be a table")
    known = {"experiment", "seed", "out", "model", "run", "check"}
    for k in raw:
        _need(k in known, k, "unknown key")
    exp = raw.get("experiment")
    _need(exp in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    seed = raw.get("seed", 0)
    _need(_is_int(seed) and 0 <= seed < 2**64, "seed", "must be an integer in [0, 2^64)")
    out = raw.get("out")
    _need(out is None or isinstance(out, str), "out", "must be a path string")

    model = dict(MODEL_DEFAULTS)
    for k, v in raw.get("model", {}).items():
        _need(k in MODEL_DEFAULTS, f"model.{k}", "unknown key")
        model[k] = v
    for k, kind in (("drift", "drift"), ("diffusion", "diffusion")):
        name = model[k]
        p = PRESETS.get(str(name).split("(")[0])
        _need(p is not None and p.kind == kind, f"model.{k}", f"unknown {kind} preset {name!r}")
    _need(_is_int(model["d"]) and model["d"] >= 1, "model.d", "must be a positive integer")
    if model["x0"] is not None:
        _need(isinstance(model["x0"], list) and len(model["x0"]) == model["d"]
              and all(_is_num(v) for v in model["x0"]), "model.x0", f"must be a list of {model['d']} numbers")
    if model["lam"] is not None:
        _need(_is_num(model["lam"]) and model["lam"] > 0, "model.lam", "must be a positive number")
    for k in ("drift_params", "diffusion_params"):
        _need(isinstance(model[k], dict), f"model.{k}", "must be a table")
    try:
        build_model(**model)
    except (ModelError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from exc

    run = dict(RUN_DEFAULTS[exp])
    for k, v in raw.get("run", {}).items():
        _need(k in run, f"run.{k}", f"unknown key for experiment {exp}")
        run[k] = v
    for k in ("ns", "Ms", "thetas", "times"):
        if k in run:
            _increasing(f"run.{k}", run[k])
    for k in ("ns", "Ms"):
        if k in run:
            _need(all(_is_int(v) for v in run[k]), f"run.{k}", "must contain integers")
    if exp.startswith("clt"):
        _need(len(run["ns"]) >= 4, "run.ns", "a CLT trend needs at least 4 values of n")
        _need(run["n_paths"] >= 1000, "run.n_paths", "a CLT experiment needs at least 1000 paths")
        _need(all(0 < t <= 1 for t in run["times"]), "run.times", "must lie in (0, 1]")
    for k in ("M", "n_paths", "n", "n_fine", "limit_steps", "var_n", "var_M", "var_paths", "Nx", "Nt"):
        if k in run:
            _need(_is_int(run[k]) and run[k] >= 1, f"run.{k}", "must be a positive integer")
    if "n_paths" in run:
        _need(run["n_paths"] >= 2, "run.n_paths", "must be at least 2")
    if "p" in run:
        _need(_is_num(run["p"]) and run["p"] >= 1, "run.p", "must be a number >= 1")
    for k in ("theta", "R"):
        if k in run:
            _need(_is_num(run[k]) and run[k] > 0, f"run.{k}", "must be a positive number")
    if run.get("delta") is not None:
        _need(_is_num(run["delta"]) and run["delta"] >= 0, "run.delta", "must be a number >= 0")
    if run.get("deltas") is not None:
        _need(isinstance(run["deltas"], list) and len(run["deltas"]) >= 2
              and all(_is_num(v) and v > 0 for v in run["deltas"]), "run.deltas",
              "must list at least two positive scales")
    if exp == "quadrature":
        from .experiments import QUADRATURE_F, QUADRATURE_G
        _need(run["f"] in QUADRATURE_F, "run.f", f"must be one of {sorted(QUADRATURE_F)}")
        _need(run["g"] in QUADRATURE_G, "run.g", f"must be one of {sorted(QUADRATURE_G)}")
        _need(model["d"] == 1, "model.d", "quadrature integrands are one-dimensional")
    if exp in ("clt-sobolev", "zvonkin-sweep"):
        _need(model["d"] == 1, "model.d", "the corrector PDE is solved for d = 1 only")

    check = dict(raw.get("check", {}))
    for k, v in check.items():
        _need(k in CHECK_KEYS, f"check.{k}", "unknown key")
        if k == "trend":
            _need(isinstance(v, bool), f"check.{k}", "must be true or false")
        else:
            _need(_is_num(v), f"check.{k}", "must be a number")
    return ExperimentConfig(exp, seed, out, model, run, check)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<file>: {exc}") from exc
    return validate(raw)


# ------------------------------------------------------------------ execution

def _smooth(model) -> bool:
    return str(getattr(model.drift, "regularity", "")).startswith("C^inf")


def _default_checks(cfg: ExperimentConfig, model) -> dict:
    exp = cfg.experiment
    if exp == "strong-rate":
        return {"slope_min": -0.6, "slope_max": -0.4 if _smooth(model) else -0.35}
    if exp == "quadrature":
        return {"slope_max": -0.9 if cfg.run["f"] == "c2-sin" and cfg.run["g"] == "one" else -0.55}
    if exp == "qx-stability":
        return {"seminorm_ratio_max": 2.0, "trend": True}
    if exp.startswith("clt"):
        out = {"trend": True}
        if _smooth(model) and exp == "clt-holder":
            out["ratio_max"] = 0.5
        return out
    if exp == "zvonkin-sweep":
        return {"slope_max": -0.3}
    if exp == "area-check":
        return {"slope_min": -0.6, "slope_max": -0.4, "var_tol": 0.03}
    return {}


def _rate_check(summary, chk, failures):
    if summary.get("degenerate"):
        return
    s = summary["slope"]
    if "slope_min" in chk and s < chk["slope_min"]:
        failures.append(f"slope {s:.4f} < {chk['slope_min']}")
    if "slope_max" in chk and s > chk["slope_max"]:
        failures.append(f"slope {s:.4f} > {chk['slope_max']}")
    if "r_squared_min" in chk and summary["r_squared"] < chk["r_squared_min"]:
        failures.append(f"r^2 {summary['r_squared']:.4f} < {chk['r_squared_min']}")


def execute(cfg: ExperimentConfig, threads: int | None = None):
    """Run the configured experiment; returns (rows, summary, failures)."""
    from . import experiments as ex
    from .zvonkin import check_gradient_bound

    model = build_model(**cfg.model)
    r = cfg.run
    seed = cfg.seed
    chk = {**_default_checks(cfg, model), **cfg.check}
    failures: list[str] = []
    exp = cfg.experiment

    if exp in ("strong-rate", "quadrature"):
        if exp == "strong-rate":
            res = ex.strong_rate_experiment(model, r["ns"], r["p"], r["n_paths"], r["M"], seed, threads)
        else:
            res = ex.quadrature_experiment(model, ex.QUADRATURE_G[r["g"]], ex.QUADRATURE_F[r["f"]], r["ns"],
                                           r["p"], r["n_paths"], r["M"], seed, threads,
                                           label=f"f={r['f']}, g={r['g']}")
        rows, summary = res.rows(), res.summary()
        _rate_check(summary, chk, failures)
    elif exp == "qx-stability":
        rows, summary = ex.qx_stability(model.drift, model, r["n_fine"], r["n"], r["deltas"], r["n_paths"],
                                        seed=seed, threads=threads)
        if summary["seminorm_ratio"] > chk.get("seminorm_ratio_max", np.inf):
            failures.append(f"seminorm ratio {summary['seminorm_ratio']:.3f} > {chk['seminorm_ratio_max']}")
        if chk.get("trend") and not summary["cauchy_decreasing"]:
            failures.append("delta-halving distances are not decreasing")
    elif exp.startswith("clt"):
        case = "holder" if exp == "clt-holder" else "sobolev"
        grid = {k: r[k] for k in ("R", "Nx", "Nt")} if case == "sobolev" else None
        reports, summary = ex.clt_experiment(model, case, r["ns"], r["n_paths"], r["M"], r["limit_steps"],
                                             tuple(r["times"]), seed, r.get("delta"), r["theta"], threads,
                                             grid)
        rows = [row for rep in reports for row in rep.rows()]
        if chk.get("trend") and not summary["trend_ok"]:
            failures.append("terminal W1 is not nonincreasing within two standard errors")
        if "ratio_max" in chk and not summary["ratio_last_first"] <= chk["ratio_max"]:
            failures.append(f"W1 ratio last/first {summary['ratio_last_first']:.3f} > {chk['ratio_max']}")
    elif exp == "zvonkin-sweep":
        table = check_gradient_bound(model, r["thetas"], R=r["R"], Nx=r["Nx"], Nt=r["Nt"])
        rows = table.rows()
        summary = {"slope": table.slope, "sup_grads": table.sup_grads.tolist(),
                   "usable": [bool(g < 1) for g in table.sup_grads]}
        if not np.isnan(table.slope) and table.slope > chk.get("slope_max", np.inf):
            failures.append(f"gradient slope {table.slope:.3f} > {chk['slope_max']}")
    elif exp == "area-check":
        rows, summary = ex.area_check(r["n"], tuple(r["Ms"]), r["n_paths"], r["var_n"], r["var_M"],
                                      r["var_paths"], seed, threads)
        s = summary["residual_slope"]
        if not chk.get("slope_min", -np.inf) <= s <= chk.get("slope_max", np.inf):
            failures.append(f"residual slope {s:.3f} outside [{chk.get('slope_min')}, {chk.get('slope_max')}]")
        if abs(summary["var_w12"] - 1.0) > chk.get("var_tol", np.inf):
            failures.append(f"Var(W12) = {summary['var_w12']:.4f} not within {chk['var_tol']} of 1")
    else:  # pragma: no cover - validate() rejects this
        raise ConfigError(f"experiment: unknown {exp!r}")
    summary = {"experiment": exp, **_plain(summary), "check": {"thresholds": chk, "failures": failures}}
    return rows, summary, failures


def _plain(obj):
    """Convert numpy scalars and arrays for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def run_experiment(cfg: ExperimentConfig, out: Path, threads: int | None = None):
    """Execute and write outputs atomically; returns (summary, failures)."""
    out = Path(out)
    threads = default_threads() if threads is None else max(1, threads)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        t0 = time.perf_counter()
        rows, summary, failures = execute(cfg, threads)
        files = {
            "results.csv": rows_to_csv(rows).encode(),
            "summary.json": (json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n").encode(),
        }
        manifest = {
            "experiment": cfg.experiment,
            "seed": cfg.seed,
            "config": cfg.canonical(),
            "config_sha256": cfg.digest(),
            "version": __version__,
            "source_sha256": _source_digest(),
            "numpy": np.__version__,
            "outputs": {k: _sha(v) for k, v in files.items()},
            "threads": threads,
            "elapsed_seconds": round(time.perf_counter() - t0, 3),
        }
        files["manifest.json"] = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        for name, data in files.items():
            (staging / name).write_bytes(data)
        out.mkdir(parents=True, exist_ok=True)
        for name in files:
            (staging / name).replace(out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return summary, failures


# ------------------------------------------------------------------ entry points

def _parser():
    ap = argparse.ArgumentParser(prog="emclt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"emclt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a TOML config")
    run.add_argument("config_pos", nargs="?", metavar="CONFIG", help="config file (or use --config)")
    run.add_argument("--config", dest="config", help="config file")
    run.add_argument("--check", action="store_true", help="exit 2 if an acceptance threshold fails")
    run.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    run.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    run.add_argument("--out", help="output directory (default: config 'out' or results/<experiment>)")

    re = sub.add_parser("rerun", help="rerun from a manifest and compare output hashes")
    re.add_argument("manifest")
    re.add_argument("--out", required=True, help="output directory for the rerun")
    re.add_argument("--threads", type=int)

    sub.add_parser("list-presets", help="list drift and diffusion presets")
    return ap


def _fail(msg) -> int:
    print(f"emclt: error: {msg}", file=sys.stderr)
    return 1


def _report(summary, failures, out, check) -> int:
    print(f"{summary['experiment']}: wrote {out}")
    for f in failures:
        print(f"  threshold: {f}")
    if check and failures:
        return 2
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-presets":
        print(list_presets())
        return 0
    if args.threads is not None and args.threads < 1:
        return _fail("--threads must be at least 1")
    try:
        if args.command == "run":
            path = args.config or args.config_pos
            if path is None:
                return _fail("a config file is required (--config PATH)")
            cfg = load_config(path)
            if args.seed is not None:
                if not 0 <= args.seed < 2**64:
                    raise ConfigError("seed: must be an integer in [0, 2^64)")
                cfg.seed = args.seed
            out = Path(args.out or cfg.out or Path("results") / cfg.experiment)
            summary, failures = run_experiment(cfg, out, args.threads)
            return _report(summary, failures, out, args.check)
        manifest = json.loads(Path(args.manifest).read_text())
        cfg = validate({k: v for k, v in manifest["config"].items() if k != "out"})
        out = Path(args.out)
        run_experiment(cfg, out, args.threads)
        fresh = json.loads((out / "manifest.json").read_text())["outputs"]
        diff = [k for k in manifest["outputs"] if manifest["outputs"][k] != fresh.get(k)]
        if diff:
            print(f"rerun differs from manifest in: {', '.join(diff)}")
            return 2
        print(f"rerun reproduces {', '.join(sorted(fresh))} byte-for-byte")
        return 0
    except ConfigError as exc:
        return _fail(f"config: {exc}")
    except Exception as exc:  # noqa: BLE001 - any failure is reported as exit 1
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
