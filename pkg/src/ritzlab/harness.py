"""Study driver: grids, per-point execution, rate fits and byte-stable output.

A study is a grid of independent points.  Every point draws its randomness
from a Philox stream keyed by the master seed, the point and a role string,
so the rows do not depend on execution order or on the number of workers.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .approx import build_approximant, error_rules, existence_bound, h1_error, split_width
from .complexity import ClassSpec, gsp_bounds, net_class_bound, rademacher_mc
from .exact import manufacture_rhs, regularity_report
from .ritz import TrainConfig, train
from .spectral import CosineSeries, norm

__all__ = [
    "StudyConfig",
    "StudyResult",
    "RateFit",
    "load_config",
    "read_config",
    "run_study",
    "fit_rate",
    "emit",
    "study_rng",
    "cube_root_width",
    "random_series",
    "COLUMNS",
]

log = logging.getLogger(__name__)

KINDS = ("approximation", "generalization", "regularity", "complexity")

COLUMNS = {
    "approximation": ["d", "m", "m1", "m2", "activation", "tau", "seed", "h1_error",
                      "barron_norm", "bound_thm"],
    "generalization": ["d", "n", "m", "seed", "excess", "relative_h1", "population_loss",
                       "empirical_loss", "gen_proxy", "best_iteration", "budget", "tau"],
    "regularity": ["d", "s", "seed", "ratio", "bound", "barron_u", "barron_f", "holds"],
    "complexity": ["d", "m", "n", "B", "class", "seed", "estimate", "stderr", "bound",
                   "dominated"],
}
TRAILER = ["config_hash", "error"]


def _tuple(v) -> tuple:
    if v is None:
        return ()
    if isinstance(v, (str, bytes, dict)) or not hasattr(v, "__iter__"):
        return (v,)
    return tuple(v)


@dataclass(frozen=True)
class StudyConfig:
    """Grid and settings of one study.

    Grids that do not apply to ``kind`` are ignored.  ``problem`` may hold
    a serialized series (the exact solution for generalization, the
    approximation target otherwise); without it problems are drawn from
    ``modes`` random modes with entries up to ``max_freq`` and standard
    normal coefficients.
    """

    kind: str
    dims: tuple = (1,)
    widths: tuple = ()
    samples: tuple = ()
    smoothness: tuple = ()
    budgets: tuple = ()
    seeds: tuple = (0,)
    activations: tuple = ("relu",)
    master_seed: int = 0
    scheme: str = "units"
    modes: int = 6
    max_freq: int = 2
    problem: dict | None = None
    potential: dict | None = None
    # generalization training
    iterations: int = 600
    optimizer: str = "adam"
    lr: float = 0.2
    schedule: str = "cosine"
    train_activation: str = "softplus"
    sample_tag: str = "iid-uniform"
    # quadrature and Monte Carlo
    randomizations: int = 2
    classes: tuple = ("F", "G_P", "G_S")
    draws: int = 8
    restarts: int = 2
    steps: int = 40
    F: float = 1.0
    V_max: float = 2.0
    # criteria
    slope_band: tuple = (-0.65, -0.35)
    max_slope: float = -0.2
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}; expected one of {KINDS}")
        for name in ("dims", "widths", "samples", "smoothness", "budgets", "seeds",
                     "activations", "classes", "slope_band"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if any(d < 1 for d in self.dims):
            raise ValueError("dimensions must be positive")
        if len(self.slope_band) != 2:
            raise ValueError("slope_band needs two entries")

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def config_hash(self) -> str:
        body = self.to_dict()
        body.pop("out")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def grid(self) -> list[tuple]:
        """Grid points in emission order."""
        k = self.kind
        if k == "approximation":
            return [(d, m, a, s) for d in self.dims for m in self.widths
                    for a in self.activations for s in self.seeds]
        if k == "generalization":
            return [(d, n, s) for d in self.dims for n in self.samples for s in self.seeds]
        if k == "regularity":
            return [(d, s_, s) for d in self.dims for s_ in self.smoothness for s in self.seeds]
        return [(d, m, n, B, c, s) for d in self.dims for m in self.widths for n in self.samples
                for B in self.budgets for c in self.classes for s in self.seeds]


def read_config(path) -> dict:
    """Parse a ``.toml`` file, or any other file as JSON."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode())
    return json.loads(raw)


def load_config(path, **overrides) -> StudyConfig:
    """Read a study config from TOML or JSON; ``overrides`` replace keys."""
    data = read_config(path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return StudyConfig.from_dict(data)


def study_rng(master_seed: int, point, role: str) -> np.random.Generator:
    """Counter-based stream keyed by ``(master_seed, point, role)``."""
    text = json.dumps([int(master_seed), list(point), role], separators=(",", ":"))
    key = int.from_bytes(hashlib.sha256(text.encode()).digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def cube_root_width(n: int) -> int:
    """Smallest integer ``m`` with ``m^3 >= n``."""
    m = max(1, round(n ** (1.0 / 3.0)))
    while m ** 3 < n:
        m += 1
    while m > 1 and (m - 1) ** 3 >= n:
        m -= 1
    return m


def random_series(dim: int, modes: int, max_freq: int, rng, *, zero_mean: bool = False) -> CosineSeries:
    """Sparse series with ``modes`` draws of multi-indices and normal coefficients."""
    coeffs = {}
    for _ in range(modes):
        k = tuple(int(v) for v in rng.integers(0, max_freq + 1, size=dim))
        if zero_mean and not any(k):
            k = (1,) + k[1:]
        coeffs[k] = coeffs.get(k, 0.0) + float(rng.standard_normal())
    return CosineSeries(dim, coeffs)


def _problem(cfg: StudyConfig, d: int, zero_mean: bool) -> CosineSeries:
    if cfg.problem is not None:
        u = CosineSeries.from_dict(cfg.problem)
        if u.dim == d:
            return u
    rng = study_rng(cfg.master_seed, ["problem", d], "problem")
    return random_series(d, cfg.modes, cfg.max_freq, rng, zero_mean=zero_mean)


def _run_approximation(cfg, point):
    d, m, act, seed = point
    u = _problem(cfg, d, zero_mean=False)
    net = build_approximant(u, m, act, study_rng(cfg.master_seed, point, "maurey"),
                            scheme=cfg.scheme)
    m1, m2 = split_width(m) if cfg.scheme == "two-stage" else (m, m)
    qseed = int(study_rng(cfg.master_seed, point, "quadrature").integers(2 ** 63))
    rules = error_rules(d, qseed, cfg.randomizations)
    return {"m1": m1, "m2": m2, "tau": net.activation.tau if act == "softplus" else math.nan,
            "h1_error": h1_error(net, u, rules), "barron_norm": norm(u, "barron", 2.0),
            "bound_thm": existence_bound(u, m, act)}


def _run_generalization(cfg, point):
    d, n, seed = point
    u_star = _problem(cfg, d, zero_mean=True)
    V = None if cfg.potential is None else CosineSeries.from_dict(cfg.potential)
    f = manufacture_rhs(u_star, V)
    m = cube_root_width(n)
    rng = study_rng(cfg.master_seed, point, "train")
    init_seed, sample_seed = (int(v) for v in rng.integers(0, 2 ** 63, size=2))
    result = train(TrainConfig(f=f, V=V, m=m, n=n, activation=cfg.train_activation,
                               optimizer=cfg.optimizer, lr=cfg.lr, schedule=cfg.schedule,
                               iterations=cfg.iterations, init_seed=init_seed,
                               sample_seed=sample_seed, sample_tag=cfg.sample_tag),
                   u_star=u_star)
    diag = result.diagnostics
    return {"m": m, "excess": diag["excess"], "relative_h1": diag["relative_h1"],
            "population_loss": diag["population_loss"], "empirical_loss": diag["best_loss"],
            "gen_proxy": diag["gen_proxy"], "best_iteration": result.best_iteration,
            "budget": diag["budget"], "tau": diag["tau"]}


def _run_regularity(cfg, point):
    d, s, seed = point
    rng = study_rng(cfg.master_seed, point, "source")
    f = random_series(d, cfg.modes, cfg.max_freq, rng, zero_mean=True)
    f = CosineSeries(d, {k: v for k, v in f if any(k)})
    V = None if cfg.potential is None else CosineSeries.from_dict(cfg.potential)
    rep = regularity_report(f, s, V)
    return {"ratio": rep["ratio"], "bound": rep.values.get("bound", math.nan),
            "barron_u": rep["barron_u"], "barron_f": rep["barron_f"],
            "holds": int(rep.checks.get("ratio_le_d", True))}


def _run_complexity(cfg, point):
    d, m, n, B, cls, seed = point
    spec = ClassSpec.for_budget(B, m, d, F=cfg.F, V_max=cfg.V_max)
    est = rademacher_mc(cls, spec, n, cfg.draws, seed=study_rng(cfg.master_seed, point, "sigma"),
                        restarts=cfg.restarts, steps=cfg.steps)
    if cls == "F":
        bound = net_class_bound(spec, n)
    else:
        bound = gsp_bounds(spec, n)["poisson" if cls == "G_P" else "schrodinger"]
    return {"estimate": est.estimate, "stderr": est.stderr, "bound": bound,
            "dominated": int(est.estimate - 3 * est.stderr <= bound)}


_RUNNERS = {"approximation": _run_approximation, "generalization": _run_generalization,
            "regularity": _run_regularity, "complexity": _run_complexity}
_KEYS = {"approximation": ("d", "m", "activation", "seed"), "generalization": ("d", "n", "seed"),
         "regularity": ("d", "s", "seed"), "complexity": ("d", "m", "n", "B", "class", "seed")}


def _run_point(cfg: StudyConfig, point) -> dict:
    row = dict(zip(_KEYS[cfg.kind], point))
    with threadpool_limits(1):
        try:
            row.update(_RUNNERS[cfg.kind](cfg, point))
            row["error"] = ""
        except Exception as exc:  # recorded per row; the study goes on
            log.warning("grid point %s failed: %s", point, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
    row["config_hash"] = cfg.config_hash
    return {c: row.get(c, math.nan) for c in COLUMNS[cfg.kind] + TRAILER}


class RateFit(NamedTuple):
    slope: float
    intercept: float
    ci_low: float
    ci_high: float


@dataclass
class StudyResult:
    """Rows, rate fits and criteria flags of a finished study."""

    config: StudyConfig
    rows: list[dict] = field(default_factory=list)
    fits: dict[str, RateFit] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    environment: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def column(self, name: str, **where) -> np.ndarray:
        sel = [r for r in self.rows if all(r[k] == v for k, v in where.items())]
        return np.array([r[name] for r in sel])


def environment_fingerprint() -> dict:
    import scipy

    return {"ritzlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "dtype": "float64",
            "eps": float(np.finfo(np.float64).eps)}


def fit_rate(rows, x: str, y: str, *, seed_field: str = "seed", resamples: int = 200,
             rng=0) -> RateFit:
    """Least-squares slope of ``log median y`` against ``log x``.

    The confidence interval is the 2.5 to 97.5 percentile range over
    ``resamples`` bootstrap draws of whole seeds.

    Raises
    ------
    ValueError
        With fewer than three distinct ``x`` or a non-positive ``y``.

    Examples
    --------
    >>> rows = [{"n": n, "e": n ** (-1 / 3), "seed": 0} for n in (8, 64, 512)]
    >>> round(fit_rate(rows, "n", "e").slope, 12)
    -0.333333333333
    """
    rows = [r for r in rows if not r.get("error") and math.isfinite(r[y])]
    xs = sorted({r[x] for r in rows})
    if len(xs) < 3:
        raise ValueError("a rate fit needs at least three distinct x values")
    if any(r[y] <= 0 for r in rows):
        raise ValueError(f"field {y!r} has non-positive values")
    seeds = sorted({r.get(seed_field, 0) for r in rows})
    table = {(r[x], r.get(seed_field, 0)): r[y] for r in rows}
    logx = np.log(np.array(xs, dtype=float))

    def fit(chosen):
        med = [np.median([table[(xv, s)] for s in chosen if (xv, s) in table]) for xv in xs]
        return np.polyfit(logx, np.log(med), 1)

    slope, intercept = fit(seeds)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    boots = []
    for _ in range(resamples):
        chosen = [seeds[i] for i in gen.integers(0, len(seeds), len(seeds))]
        if all(any((xv, s) in table for s in chosen) for xv in xs):
            boots.append(fit(chosen)[0])
    lo, hi = np.percentile(boots, [2.5, 97.5]) if boots else (slope, slope)
    return RateFit(float(slope), float(intercept), float(lo), float(hi))


def _medians(rows, x, y):
    xs = sorted({r[x] for r in rows})
    return xs, [float(np.median([r[y] for r in rows if r[x] == xv])) for xv in xs]


def _assess(result: StudyResult) -> None:
    cfg, rows = result.config, [r for r in result.rows if not r["error"]]
    result.flags["no_row_errors"] = len(rows) == len(result.rows)
    if cfg.kind == "approximation":
        lo, hi = cfg.slope_band
        for d in cfg.dims:
            for act in cfg.activations:
                sub = [r for r in rows if r["d"] == d and r["activation"] == act]
                if len({r["m"] for r in sub}) < 3:
                    continue
                rf = fit_rate(sub, "m", "h1_error")
                result.fits[f"h1_error_vs_m_d{d}_{act}"] = rf
                result.flags[f"slope_in_band_d{d}_{act}"] = lo <= rf.slope <= hi
    elif cfg.kind == "generalization":
        for d in cfg.dims:
            sub = [r for r in rows if r["d"] == d]
            if len({r["n"] for r in sub}) < 3:
                continue
            rf = fit_rate(sub, "n", "excess")
            result.fits[f"excess_vs_n_d{d}"] = rf
            _, med = _medians(sub, "n", "excess")
            inversions = sum(b > a for a, b in zip(med, med[1:]))
            result.flags[f"monotone_up_to_one_inversion_d{d}"] = inversions <= 1
            result.flags[f"slope_le_max_d{d}"] = rf.slope <= cfg.max_slope
    elif cfg.kind == "regularity":
        result.flags["ratio_le_d"] = all(r["holds"] for r in rows)
    else:
        result.flags["mc_dominated"] = all(r["dominated"] for r in rows)


class _RowWriter:
    """Appends rows in grid order, flushing each so a kill leaves a valid prefix."""

    def __init__(self, path: Path | None, columns):
        self.columns = columns
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", newline="")
            self.fh.write(_csv_line(columns))
            self._sync()

    def _sync(self):
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def write(self, row):
        if self.fh is not None:
            self.fh.write(_csv_line([_fmt(row[c]) for c in self.columns]))
            self._sync()

    def close(self):
        if self.fh is not None:
            self.fh.close()


def run_study(config: StudyConfig, *, threads: int = 1, out=None) -> StudyResult:
    """Execute every grid point and assess the study's criteria.

    Points run on ``threads`` worker processes; results are merged in grid
    order so the output does not depend on the worker count.  With an
    output directory the rows are appended to ``rows.csv`` as they
    complete.
    """
    out = out if out is not None else config.out
    points = config.grid()
    columns = COLUMNS[config.kind] + TRAILER
    writer = _RowWriter(None if out is None else Path(out) / "rows.csv", columns)
    rows: list[dict] = []
    try:
        if threads <= 1 or len(points) <= 1:
            for p in points:
                rows.append(_run_point(config, p))
                writer.write(rows[-1])
                log.info("%s %s done", config.kind, p)
        else:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(_run_point, config, p) for p in points]
                for p, fut in zip(points, futures):
                    rows.append(fut.result())
                    writer.write(rows[-1])
                    log.info("%s %s done", config.kind, p)
    finally:
        writer.close()
    result = StudyResult(config, rows, environment=environment_fingerprint())
    _assess(result)
    if out is not None:
        emit(result, out)
    return result


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.12e" % v
    return str(v)


def _csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float("%.12e" % v) if math.isfinite(v) else None
    return v


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def emit(result: StudyResult, out, formats=("csv", "json")) -> list[Path]:
    """Write ``rows.csv`` and ``result.json`` under ``out``.

    Floats use ``%.12e`` and keys are sorted, so equal results give equal
    bytes.

    Raises
    ------
    OSError
        With the offending path in the message.
    """
    out = Path(out)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            columns = COLUMNS[result.config.kind] + TRAILER
            text = _csv_line(columns) + "".join(
                _csv_line([_fmt(r[c]) for c in columns]) for r in result.rows)
            path = out / "rows.csv"
            _atomic_write(path, text)
            written.append(path)
        if "json" in formats:
            body = {"config": result.config.to_dict(), "config_hash": result.config.config_hash,
                    "environment": result.environment,
                    "fits": {k: v._asdict() for k, v in sorted(result.fits.items())},
                    "flags": dict(sorted(result.flags.items())), "ok": result.ok,
                    "rows": result.rows}
            body["config"].pop("out")
            path = out / "result.json"
            _atomic_write(path, json.dumps(_jsonable(body), sort_keys=True, indent=2) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"could not write study output under {out}: {exc}") from exc
    return written
