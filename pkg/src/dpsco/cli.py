"""Command-line experiment runner.

Config files are either flat ``key = value`` text (``#`` starts a comment)::

    algo = nsgd
    distribution = ball_uniform_mean_estimation
    dist.mean_norm = 0.5
    n = 250, 500, 1000
    d = 10
    epsilon = 1
    delta = 1e-7
    trials = 20
    seed = 7

or a JSON object with the same keys, where ``distribution`` may also be an
object ``{"name": ..., "mean_norm": ...}`` and ``n`` a list.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BudgetError, validate_budget
from .harness import ALGORITHMS, REDUCTION_PREFIX, AlgoSpec, derived_params, row_theory_bound, run_trial, trial_stream
from .losses import SyntheticDistribution, default_domain
from .smoothing import ProxMode

CSV_COLUMNS = (
    "algo", "n", "d", "epsilon", "delta", "trial", "seed", "excess_emp", "excess_pop",
    "grad_evals", "runtime_ms", "theory_bound", "non_private",
)


class ConfigError(ValueError):
    def __init__(self, message: str, where: Optional[str] = None):
        super().__init__(f"{where}: {message}" if where else message)


@dataclass
class ExperimentConfig:
    algo: str = "nsgd"
    distribution: str = "ball_uniform_mean_estimation"
    dist_params: dict = field(default_factory=dict)
    n: list = field(default_factory=lambda: [1000])
    d: int = 10
    epsilon: float = 1.0
    delta: float = 1e-6
    trials: int = 1
    seed: int = 0
    M: float = 1.0
    out: Optional[str] = None
    noise_off: bool = False
    prox_mode: str = "exact-oracle"
    tol: Optional[float] = None
    sensitivity_audit: bool = False
    workers: int = 1
    # key -> "file:line" (or "--flag") for error messages
    origin: dict = field(default_factory=dict, repr=False)

    def where(self, key: str) -> Optional[str]:
        return self.origin.get(key)

    @property
    def spec(self) -> AlgoSpec:
        return AlgoSpec(self.algo, self.noise_off, self.prox_mode, self.tol, self.sensitivity_audit)

    def make_distribution(self) -> SyntheticDistribution:
        return SyntheticDistribution.from_params(self.distribution, self.d, **dict(self.dist_params))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text) -> list:
    items = text if isinstance(text, (list, tuple)) else str(text).replace(",", " ").split()
    out = []
    for item in items:
        f = float(item)
        if f != int(f):
            raise ValueError(f"expected an integer, got {item!r}")
        out.append(int(f))
    if not out:
        raise ValueError("empty list")
    return out


def _int(text) -> int:
    f = float(text)
    if f != int(f):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(f)


def _opt_float(text):
    return None if text is None or str(text).strip().lower() in ("", "none") else float(text)


FIELDS = {
    "algo": str,
    "distribution": str,
    "n": _int_list,
    "d": _int,
    "epsilon": float,
    "delta": float,
    "trials": _int,
    "seed": _int,
    "M": float,
    "out": str,
    "noise_off": _bool,
    "prox_mode": str,
    "tol": _opt_float,
    "sensitivity_audit": _bool,
    "workers": _int,
}
ALIASES = {"eps": "epsilon", "algorithm": "algo", "dist": "distribution", "root_seed": "seed", "noise-off": "noise_off",
           "prox-mode": "prox_mode", "radius": "M"}


def _assign(cfg: ExperimentConfig, key: str, value, where: str) -> None:
    key = ALIASES.get(key, key)
    if key.startswith("dist."):
        cfg.dist_params[key[5:]] = value
        cfg.origin.setdefault("distribution_params", where)
        cfg.origin[key] = where
        return
    if key not in FIELDS:
        raise ConfigError(f"unknown key {key!r}", where)
    try:
        setattr(cfg, key, FIELDS[key](value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}", where) from None
    cfg.origin[key] = where


def _json_line(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 1


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", f"{source}:{exc.lineno}") from None
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object", f"{source}:1")
        for key, value in data.items():
            where = f"{source}:{_json_line(text, key)}"
            if key in ("distribution", "dist") and isinstance(value, dict):
                value = dict(value)
                if "name" not in value:
                    raise ConfigError("distribution object needs a 'name'", where)
                _assign(cfg, "distribution", value.pop("name"), where)
                for k, v in value.items():
                    _assign(cfg, f"dist.{k}", v, f"{source}:{_json_line(text, k)}")
            else:
                _assign(cfg, key, value, where)
        return cfg
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        where = f"{source}:{lineno}"
        if not sep or not key.strip():
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", where)
        _assign(cfg, key.strip(), value.strip(), where)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config_text(text, str(path))


def validate_config(cfg: ExperimentConfig) -> None:
    """Typed validation; errors point at the offending config line or flag."""
    inner = cfg.algo[len(REDUCTION_PREFIX):] if cfg.algo.startswith(REDUCTION_PREFIX) else cfg.algo
    if inner not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {cfg.algo!r}; choose from {ALGORITHMS} or {REDUCTION_PREFIX}<algo>",
                          cfg.where("algo"))
    if cfg.trials < 1:
        raise ConfigError("trials must be at least 1", cfg.where("trials"))
    if cfg.d < 1:
        raise ConfigError("d must be at least 1", cfg.where("d"))
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1", cfg.where("workers"))
    if not cfg.M > 0:
        raise ConfigError("M must be positive", cfg.where("M"))
    for n in cfg.n:
        if n < 1:
            raise ConfigError(f"sample size must be positive, got {n}", cfg.where("n"))
    try:
        ProxMode.parse(cfg.prox_mode)
    except ValueError as exc:
        raise ConfigError(str(exc), cfg.where("prox_mode")) from None
    try:
        dist = cfg.make_distribution()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), cfg.where("distribution_params") or cfg.where("distribution")) from None
    try:
        loss = dist.default_loss(cfg.M)
        default_domain(dist, cfg.M)
    except ValueError as exc:
        raise ConfigError(str(exc), cfg.where("M") or cfg.where("distribution")) from None
    if inner in ("nsgd", "objpert", "objpert-app") and not loss.is_smooth:
        raise ConfigError(f"{inner} needs a smooth loss; {dist.kind} uses a non-smooth loss (use proxgd)",
                          cfg.where("algo"))
    for n in cfg.n:
        try:
            validate_budget(n, cfg.epsilon, cfg.delta)
        except BudgetError as exc:
            key = "epsilon" if cfg.epsilon > 1 or cfg.epsilon <= 0 else "delta"
            raise ConfigError(f"n={n}: {exc}", cfg.where(key) or cfg.where("n")) from None


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _run_one(args):
    cfg, n, trial = args
    dist = cfg.make_distribution()
    loss = dist.default_loss(cfg.M)
    domain = default_domain(dist, cfg.M)
    start = time.perf_counter_ns()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            res = run_trial(cfg.spec, dist, loss, domain, n, cfg.epsilon, cfg.delta, trial_stream(cfg.seed, n, trial))
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            return dict(n=n, trial=trial, error=f"{type(exc).__name__}: {exc}")
    elapsed = (time.perf_counter_ns() - start) / 1e6
    return dict(
        n=n, trial=trial, excess_emp=res.excess_emp, excess_pop=res.excess_pop, grad_evals=res.grad_evals,
        runtime_ms=elapsed, non_private=res.non_private, tags=list(res.tags),
        warnings=sorted({str(w.message) for w in caught}),
    )


def _row(cfg: ExperimentConfig, bound: float, rec: dict, runtime: bool) -> list:
    base = [cfg.algo, _fmt(rec["n"]), _fmt(cfg.d), _fmt(cfg.epsilon), _fmt(cfg.delta), _fmt(rec["trial"]), _fmt(cfg.seed)]
    if "error" in rec:
        return base + ["nan", "nan", "0", "", _fmt(bound), _fmt(cfg.noise_off)]
    return base + [
        _fmt(rec["excess_emp"]), _fmt(rec["excess_pop"]), _fmt(rec["grad_evals"]),
        f"{rec['runtime_ms']:.3f}" if runtime else "", _fmt(bound), _fmt(rec["non_private"]),
    ]


def run_experiment(cfg: ExperimentConfig, out_path=None, *, runtime: bool = True, log=sys.stderr) -> int:
    """Run every ``(n, trial)`` and write the CSV plus ``<out>.meta.json``; returns the exit status."""
    validate_config(cfg)
    out_path = Path(out_path or cfg.out or "results.csv")
    dist = cfg.make_distribution()
    loss = dist.default_loss(cfg.M)
    jobs = [(cfg, n, t) for n in cfg.n for t in range(cfg.trials)]
    bounds = {n: row_theory_bound(cfg.spec, n, cfg.d, cfg.epsilon, cfg.delta, loss.lipschitz, cfg.M) for n in cfg.n}
    meta = OrderedDict(
        config={k: v for k, v in asdict(cfg).items() if k != "origin"},
        loss=dict(name=loss.name, L=loss.lipschitz, beta=None if not loss.is_smooth else loss.smoothness),
        derived={str(n): derived_params(cfg.spec, n, cfg.d, cfg.epsilon, cfg.delta, loss.lipschitz, cfg.M)
                 for n in cfg.n},
        theory_bound={str(n): b for n, b in bounds.items()},
        tags=["NON-PRIVATE"] if cfg.noise_off else [],
        warnings=[],
        failures=[],
    )
    status = 0
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                records = pool.map(_run_one, jobs)  # map preserves (n, trial) order
        else:
            records = map(_run_one, jobs)
        for rec in records:
            writer.writerow(_row(cfg, bounds[rec["n"]], rec, runtime))
            if "error" in rec:
                meta["failures"].append(dict(n=rec["n"], trial=rec["trial"], error=rec["error"]))
                print(f"error: n={rec['n']} trial={rec['trial']}: {rec['error']}", file=log)
                status = 1
                break
            for tag in rec["tags"]:
                if tag not in meta["tags"]:
                    meta["tags"].append(tag)
            for msg in rec["warnings"]:
                if msg not in meta["warnings"]:
                    meta["warnings"].append(msg)
    Path(str(out_path) + ".meta.json").write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    return status


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

TABLE_COLUMNS = ("algo", "n", "d", "epsilon", "delta", "trials", "mean_excess_pop", "stderr", "theory_bound", "ratio")


def aggregate_rows(rows) -> list:
    """Group per-trial rows by (algo, n, d, epsilon, delta); failure rows are skipped."""
    groups = OrderedDict()
    for r in rows:
        v = float(r["excess_pop"])
        if math.isnan(v):
            continue
        key = (r["algo"], int(r["n"]), int(r["d"]), float(r["epsilon"]), float(r["delta"]))
        groups.setdefault(key, dict(vals=[], bound=float(r["theory_bound"])))["vals"].append(v)
    out = []
    for (algo, n, d, eps, delta), g in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        x = np.asarray(g["vals"])
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        mean = float(x.mean())
        out.append(dict(algo=algo, n=n, d=d, epsilon=eps, delta=delta, trials=int(x.size),
                        mean_excess_pop=mean, stderr=se, theory_bound=g["bound"], ratio=mean / g["bound"]))
    return out


def format_table(agg) -> str:
    cells = [list(TABLE_COLUMNS)]
    for a in agg:
        cells.append([
            a["algo"], str(a["n"]), str(a["d"]), f"{a['epsilon']:g}", f"{a['delta']:g}", str(a["trials"]),
            f"{a['mean_excess_pop']:.6e}", f"{a['stderr']:.3e}", f"{a['theory_bound']:.6e}", f"{a['ratio']:.4f}",
        ])
    if len(cells) == 1:
        return ""
    widths = [max(len(row[j]) for row in cells) for j in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))).rstrip()
             for row in cells]
    return "\n".join(lines) + "\n"


def format_plot_data(agg) -> str:
    """Gnuplot-style blocks, one per series, two columns each (n and value)."""
    blocks = []
    for algo in sorted({a["algo"] for a in agg}):
        sel = [a for a in agg if a["algo"] == algo]
        for col in ("mean_excess_pop", "theory_bound"):
            lines = [f"# {algo} {col}", "# n value"] + [f"{a['n']} {a[col]!r}" for a in sel]
            blocks.append("\n".join(lines))
    return "\n\n\n".join(blocks) + ("\n" if blocks else "")


def emit_rate_table(csv_path, table_path=None, plot_path=None) -> str:
    """Aggregate a results CSV into ``<csv>.table.txt`` and ``<csv>.plot.dat``; returns the table text."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    if header or rows:
        missing = [c for c in ("algo", "n", "d", "epsilon", "delta", "excess_pop", "theory_bound") if c not in header]
        if missing:
            raise ConfigError(f"CSV is missing column(s): {', '.join(missing)}", str(csv_path))
    agg = aggregate_rows(rows)
    table = format_table(agg)
    Path(table_path or str(csv_path) + ".table.txt").write_text(table)
    Path(plot_path or str(csv_path) + ".plot.dat").write_text(format_plot_data(agg))
    return table


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpsco", description="Run private convex-optimisation experiments.")
    p.add_argument("--config", help="key=value or JSON experiment file")
    p.add_argument("--out", help="CSV output path (default results.csv)")
    p.add_argument("--algo", help=f"one of {', '.join(ALGORITHMS)} or {REDUCTION_PREFIX}<algo>")
    p.add_argument("--dist", help="distribution name")
    p.add_argument("--n", help="sample size(s), comma separated")
    p.add_argument("--d", help="dimension")
    p.add_argument("--eps", help="privacy epsilon")
    p.add_argument("--delta", help="privacy delta")
    p.add_argument("--trials", help="trials per n")
    p.add_argument("--seed", help="root seed")
    p.add_argument("--noise-off", action="store_true", help="disable privacy noise (rows tagged non-private)")
    p.add_argument("--prox-mode", help="certified-gd, capped-gd:<iters> or exact-oracle")
    p.add_argument("--tol", help="optimisation tolerance override for objpert")
    p.add_argument("--sensitivity-audit", action="store_true", help="objpert-app: also record the reference gap")
    p.add_argument("--workers", help="parallel trial processes")
    p.add_argument("--no-runtime", action="store_true", help="leave runtime_ms blank (byte-reproducible output)")
    p.add_argument("--emit-table", nargs="?", const=True, default=None, metavar="CSV",
                   help="write an aggregated table and plot data; with a path and no config, only tabulate")
    return p


OVERRIDES = {"algo": "algo", "dist": "distribution", "n": "n", "d": "d", "eps": "epsilon", "delta": "delta",
             "trials": "trials", "seed": "seed", "prox_mode": "prox_mode", "tol": "tol", "workers": "workers",
             "out": "out"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if isinstance(args.emit_table, str) and args.config is None:
            print(emit_rate_table(args.emit_table), end="")
            return 0
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        for attr, key in OVERRIDES.items():
            value = getattr(args, attr)
            if value is not None:
                _assign(cfg, key, value, "--" + attr.replace("_", "-"))
        if args.noise_off:
            _assign(cfg, "noise_off", True, "--noise-off")
        if args.sensitivity_audit:
            _assign(cfg, "sensitivity_audit", True, "--sensitivity-audit")
        status = run_experiment(cfg, runtime=not args.no_runtime)
        if args.emit_table:
            csv_path = args.emit_table if isinstance(args.emit_table, str) else (cfg.out or "results.csv")
            print(emit_rate_table(csv_path), end="")
        return status
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
