"""Configuration-driven sweeps over ``L`` with CSV/JSON persistence and scaling fits."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .nodal_analysis import (
    DEFAULT_CELLS_PER_WAVELENGTH,
    DEFAULT_EXCLUSION_RADIUS,
    EnsembleConfig,
    run_trials,
)
from .rice_density import asymptotic_constant
from .symbol_geometry import annulus_moments

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "SummaryError",
    "ExperimentConfig",
    "FitResult",
    "fit_scaling",
    "run_experiment",
    "summarize",
    "theory_constant",
    "CSV_COLUMNS",
]

SCHEMA_VERSION = 1
MANIFOLDS = ("circle", "torus2", "sphere2")
_VOLUME = {"circle": 2 * math.pi, "torus2": 4 * math.pi ** 2, "sphere2": 4 * math.pi}
_DIM = {"circle": 1, "torus2": 2, "sphere2": 2}

CSV_COLUMNS = {
    1: ["trial_id", "L", "n_zeros", "degenerate", "seconds", "reasons"],
    2: ["trial_id", "L", "b0", "crit0", "crit1", "excluded0", "excluded1", "degenerate",
        "seconds", "refinements", "reasons"],
}
_INT_COLUMNS = {"trial_id", "n_zeros", "b0", "crit0", "crit1", "excluded0", "excluded1",
                "degenerate", "refinements"}


class ConfigError(ValueError):
    """Schema violations; ``errors`` maps field name to message."""

    def __init__(self, errors: dict):
        self.errors = errors
        lines = "; ".join(f"{k}: {v}" for k, v in errors.items())
        super().__init__(f"invalid experiment config: {lines}")


class SummaryError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    manifold: str
    L: list
    trials: int
    seed: int = 0
    family: str = "full"
    window: Optional[float] = None
    cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH
    morse: str = "default"
    exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS
    workers: int = 1
    csv_name: str = "trials.csv"
    summary_name: str = "summary.json"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        err = {}
        if self.schema_version != SCHEMA_VERSION:
            err["schema_version"] = f"expected {SCHEMA_VERSION}, got {self.schema_version!r}"
        if self.manifold not in MANIFOLDS:
            err["manifold"] = f"must be one of {MANIFOLDS}, got {self.manifold!r}"
        if not isinstance(self.L, (list, tuple)) or len(self.L) == 0:
            err["L"] = "must be a non-empty list"
        elif not all(isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0
                     for x in self.L):
            err["L"] = "entries must be positive numbers"
        elif any(b <= a for a, b in zip(self.L, self.L[1:])):
            err["L"] = "must be strictly increasing"
        if not isinstance(self.trials, int) or isinstance(self.trials, bool) or self.trials < 1:
            err["trials"] = f"must be an integer >= 1, got {self.trials!r}"
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            err["seed"] = f"must be a nonnegative integer, got {self.seed!r}"
        if self.family not in ("full", "window", "pure"):
            err["family"] = f"must be full, window or pure, got {self.family!r}"
        elif self.family == "window":
            if not isinstance(self.window, (int, float)) or not 0 < self.window < 1:
                err["window"] = "window family needs 0 < window < 1"
        elif self.window is not None:
            err["window"] = "only allowed with family = window"
        if not isinstance(self.cells_per_wavelength, (int, float)) or \
                self.cells_per_wavelength < 8:
            err["cells_per_wavelength"] = "must be a number >= 8"
        if self.morse != "default":
            err["morse"] = "only 'default' is supported"
        if not isinstance(self.exclusion_radius, (int, float)) or self.exclusion_radius < 0:
            err["exclusion_radius"] = "must be a nonnegative number"
        if not isinstance(self.workers, int) or isinstance(self.workers, bool) or \
                self.workers < 1:
            err["workers"] = "must be an integer >= 1"
        if err:
            raise ConfigError(err)

    @property
    def n(self) -> int:
        return _DIM[self.manifold]

    @property
    def statistic(self) -> str:
        return "n_zeros" if self.n == 1 else "crit0"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["L"] = list(self.L)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError({"<root>": "config must be a JSON object"})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        err = {k: "unknown field" for k in unknown}
        for k in ("manifold", "L", "trials"):
            if k not in d:
                err[k] = "missing required field"
        if "schema_version" not in d:
            err["schema_version"] = "missing required field"
        if err:
            raise ConfigError(err)
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError({"<root>": f"not valid JSON ({exc})"}) from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("workers")  # does not affect results
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def ensemble(self, L: float) -> EnsembleConfig:
        return EnsembleConfig(
            manifold=self.manifold, L=float(L),
            window=self.window if self.family == "window" else None,
            pure=self.family == "pure", cells_per_wavelength=self.cells_per_wavelength,
            exclusion_radius=self.exclusion_radius)


# --------------------------------------------------------------------------
# fits


@dataclass
class FitResult:
    exponent: float
    exponent_ci: tuple
    constant: float
    constant_ci: tuple
    theory_exponent: float
    theory_constant: Optional[float]
    fixed_constant: float
    fixed_constant_ci: tuple
    level: float = 0.95

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("exponent_ci", "constant_ci", "fixed_constant_ci"):
            d[k] = list(d[k])
        return d


def fit_scaling(L: Sequence[float], mean: Sequence[float], stderr: Sequence[float],
                theory_exponent: float, theory_constant: Optional[float] = None,
                level: float = 0.95) -> FitResult:
    """Weighted regression of ``log mean`` on ``log L``.

    Weights come from the delta-method variance ``(stderr/mean)^2``.  Besides
    the free fit, the constant is also estimated with the exponent pinned at
    its theoretical value (``fixed_constant``), which is far less sensitive to
    the finite-``L`` corrections at the small end of a sweep.  Intervals are
    normal-theory at the requested level.
    """
    L = np.asarray(L, float)
    m = np.asarray(mean, float)
    se = np.asarray(stderr, float)
    if L.size < 2:
        raise ValueError("a scaling fit needs at least two values of L")
    if np.any(m <= 0):
        raise ValueError("means must be positive for a log-log fit")
    sig = np.where(se > 0, se / m, np.nan)
    if np.any(~np.isfinite(sig)):
        sig = np.full_like(m, 1.0)
    w = 1.0 / sig ** 2
    x = np.log(L)
    y = np.log(m)
    X = np.stack([np.ones_like(x), x], 1)
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    a, b = cov @ (X.T @ (w * y))
    z = stats.norm.ppf(0.5 + level / 2)
    sa, sb = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    r = y - theory_exponent * x
    a_fix = float(np.sum(w * r) / np.sum(w))
    s_fix = math.sqrt(1.0 / np.sum(w))
    return FitResult(
        exponent=float(b), exponent_ci=(float(b - z * sb), float(b + z * sb)),
        constant=float(math.exp(a)),
        constant_ci=(float(math.exp(a - z * sa)), float(math.exp(a + z * sa))),
        theory_exponent=float(theory_exponent), theory_constant=theory_constant,
        fixed_constant=float(math.exp(a_fix)),
        fixed_constant_ci=(float(math.exp(a_fix - z * s_fix)),
                           float(math.exp(a_fix + z * s_fix))),
        level=level)


def theory_constant(manifold: str, family: str = "full", window: Optional[float] = None
                    ) -> float:
    """Limit of ``E(count) / L^{n/2}`` over the whole manifold for one index."""
    n = _DIM[manifold]
    if family == "full":
        c = asymptotic_constant(n, 0, "full")
    elif family == "pure":
        c = asymptotic_constant(n, 0, "pure")
    else:
        c = asymptotic_constant(n, 0, "window", moments=annulus_moments(n, window))
    # the constant ignores a common factor on the moments, so the annulus and
    # sphere bodies need no renormalization: it is per unit |dvol_g| already
    return c.value * _VOLUME[manifold]


# --------------------------------------------------------------------------
# persistence


def format_row(row: dict, cols: list) -> list:
    out = []
    for c in cols:
        v = row.get(c)
        if v is None:
            out.append("")
        elif c == "seconds":
            out.append(f"{v:.6f}")
        elif c == "L":
            out.append(repr(float(v)))
        elif isinstance(v, bool):
            out.append(str(int(v)))
        else:
            out.append(str(v))
    return out


def write_trials_csv(path, rows: Sequence[dict], n: int) -> None:
    cols = CSV_COLUMNS[n]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow(format_row(r, cols))


def _read_trials_csv(path):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SummaryError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise SummaryError(f"{path}: empty CSV")
        if "n_zeros" in header:
            n, stat = 1, "n_zeros"
        elif "crit0" in header:
            n, stat = 2, "crit0"
        else:
            raise SummaryError(f"{path}: line 1: header lacks a count column (n_zeros or crit0)")
        need = {"trial_id", "L", stat, "degenerate"}
        missing = need - set(header)
        if missing:
            raise SummaryError(f"{path}: line 1: missing columns {sorted(missing)}")
        rows, errors = [], []
        for lineno, rec in enumerate(rd, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                errors.append(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
                continue
            d = dict(zip(header, rec))
            try:
                row = {"L": float(d["L"]), "trial_id": int(d["trial_id"]),
                       "degenerate": int(d["degenerate"])}
                if row["degenerate"] not in (0, 1):
                    raise ValueError("degenerate must be 0 or 1")
                for c in header:
                    if c in _INT_COLUMNS and c not in row:
                        row[c] = int(d[c]) if d[c] != "" else None
                if row[stat] is None and not row["degenerate"]:
                    raise ValueError(f"{stat} is empty")
            except ValueError as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            rows.append(row)
        if errors:
            raise SummaryError(f"{path}: malformed rows: " + "; ".join(errors))
        if not rows:
            raise SummaryError(f"{path}: no data rows")
    return rows, n, stat


def _per_L(rows, stat):
    out = []
    extra = ["b0", "crit1"] if stat == "crit0" else []
    for L in sorted({r["L"] for r in rows}):
        sel = [r for r in rows if r["L"] == L]
        clean = [r for r in sel if not r["degenerate"]]
        x = np.array([r[stat] for r in clean], float)
        ent = {"L": L, "trials": len(sel),
               "mean": float(x.mean()) if x.size else None,
               "stderr": float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else None,
               "degenerate_fraction": (len(sel) - len(clean)) / len(sel)}
        for c in extra:
            y = np.array([r[c] for r in clean], float)
            ent[f"{c}_mean"] = float(y.mean()) if y.size else None
            ent[f"{c}_stderr"] = float(y.std(ddof=1) / math.sqrt(y.size)) if y.size > 1 else None
        out.append(ent)
    return out


def _build_summary(rows, n, stat, config: Optional[ExperimentConfig]):
    per = _per_L(rows, stat)
    theory_exp = n / 2.0
    th = None
    if config is not None:
        th = theory_constant(config.manifold, config.family, config.window)
    elif n == 1:
        th = theory_constant("circle")
    usable = [p for p in per if p["mean"] and p["stderr"]]
    fit = None
    if len(usable) >= 2:
        fit = fit_scaling([p["L"] for p in usable], [p["mean"] for p in usable],
                          [p["stderr"] for p in usable], theory_exp, th).as_dict()
    return {
        "config_hash": config.config_hash() if config is not None else None,
        "statistic": stat,
        "theory_exponent": theory_exp,
        "theory_constant": th,
        "per_L": per,
        "fit": fit,
    }


def _write_plot_files(out_dir: Path, summary: dict) -> list:
    stat = summary["statistic"]
    e = summary["theory_exponent"]
    path = out_dir / f"scaling_{stat}.txt"
    with open(path, "w") as fh:
        fh.write(f"# L  mean_{stat}/L^{e:g}\n")
        for p in summary["per_L"]:
            if p["mean"] is not None:
                fh.write(f"{p['L']!r} {p['mean'] / p['L'] ** e!r}\n")
    return [path]


def summarize(csv_path, config: Optional[ExperimentConfig] = None,
              write_plots: bool = False) -> dict:
    """Summary of a trials CSV.

    Degenerate rows are excluded from means and counted in the degenerate
    fraction.  If ``config`` is not given and a ``config.json`` sits next to
    the CSV it is used for the theoretical constant and the config hash.
    """
    csv_path = Path(csv_path)
    rows, n, stat = _read_trials_csv(csv_path)
    if config is None:
        cand = csv_path.parent / "config.json"
        if cand.exists():
            config = ExperimentConfig.load(cand)
    summary = _build_summary(rows, n, stat, config)
    if write_plots:
        _write_plot_files(csv_path.parent, summary)
    return summary


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Run every ``L`` of the sweep and persist trials, summary and plot data.

    Trial seeds are ``(config.seed + index of L, trial id)`` so each ``L`` is
    an independent stream.  Returns the summary (also written as JSON).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out}: {exc.strerror}") \
            from None
    rows = []
    for k, L in enumerate(config.L):
        res = run_trials(config.ensemble(L), config.trials, config.seed + k, config.workers)
        rows += [r.as_row() for r in res]
    config.save(out / "config.json")
    csv_path = out / config.csv_name
    write_trials_csv(csv_path, rows, config.n)
    summary = summarize(csv_path, config, write_plots=True)
    with open(out / config.summary_name, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
