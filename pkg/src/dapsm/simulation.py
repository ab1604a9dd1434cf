"""Monte Carlo study of spatial confounding.

Each dataset places units at fixed locations and draws an unmeasured
confounder ``U`` from a Matérn Gaussian process, four independent observed
confounders, a logistic treatment and a linear outcome with a unit
treatment effect. Every configured matching method is run on every
replicate and compared against the true effect.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, gamma, kv
from scipy.spatial.distance import cdist

from . import comparators
from .balance import balance_report
from .daps import DapsConfig, dapsm
from .data import Dataset
from .errors import DapsmError, InputError, NumericalError
from .estimation import att_diff_means

TRUE_ATT = 1.0
COVARIATES = ("X1", "X2", "X3", "X4")
# intercept, X1..X4, U
TREATMENT_COEFS = (-0.85, 0.1, 0.2, -0.1, -0.1, 0.3)
# Z, X1..X4, U
OUTCOME_COEFS = (1.0, 0.55, 0.21, 1.17, -0.11, 3.0)
JITTER = 1e-8


@dataclass(frozen=True)
class MaternParams:
    nu: float
    r: float

    def __post_init__(self):
        if not (self.nu > 0 and self.r > 0) or not np.isfinite([self.nu, self.r]).all():
            raise InputError(f"Matérn smoothness and range must be positive, got {self}")


def matern_correlation(d, params: MaternParams):
    """Matérn correlation 2**(1-nu)/Gamma(nu) * (d/r)**nu * K_nu(d/r), equal to 1 at d = 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise InputError("distances must be nonnegative")
    nu = params.nu
    x = d / params.r
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        rho = (2.0 ** (1.0 - nu) / gamma(nu)) * np.power(x, nu) * kv(nu, x)
    rho = np.where(x == 0, 1.0, rho)
    # K_nu underflows to 0 for large x; the product is then 0, never nan
    rho = np.where(np.isnan(rho) & (x > 0), 0.0, rho)
    return rho if rho.ndim else float(rho)


def matern_factor(locations, params: MaternParams) -> np.ndarray:
    """Lower Cholesky factor of the Matérn correlation matrix of ``locations``."""
    loc = np.asarray(locations, dtype=float)
    corr = matern_correlation(cdist(loc, loc), params)
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(corr + JITTER * np.eye(loc.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Matérn correlation matrix is not positive definite for {params}") from exc


def _standardize(u: np.ndarray) -> np.ndarray:
    u = u - u.mean()
    return u / u.std(ddof=1)


def sample_gp(locations, params: MaternParams, seed=None, factor=None, rng=None) -> np.ndarray:
    """One zero-mean Matérn GP draw, rescaled to sample mean 0 and sample variance 1."""
    if rng is None:
        rng = np.random.default_rng(seed)
    L = matern_factor(locations, params) if factor is None else factor
    return _standardize(L @ rng.standard_normal(L.shape[0]))


@dataclass
class SimulatedDataset(Dataset):
    U: Optional[np.ndarray] = None
    true_ps: Optional[np.ndarray] = None
    seed: object = None

    def __post_init__(self):
        super().__post_init__()
        if self.U is not None:
            self.extra.setdefault("U", np.asarray(self.U, dtype=float))


def generate_dataset(locations, params: MaternParams, seed=None, factor=None,
                     treatment_coefs: Sequence[float] = TREATMENT_COEFS,
                     outcome_coefs: Sequence[float] = OUTCOME_COEFS) -> SimulatedDataset:
    """Draw U, X1..X4, Z and Y (in that order, one random stream) at fixed locations."""
    loc = np.asarray(locations, dtype=float)
    n = loc.shape[0]
    if n < 2:
        raise InputError("need at least two locations")
    rng = np.random.default_rng(seed)
    U = sample_gp(loc, params, factor=factor, rng=rng)
    X = rng.standard_normal((n, len(COVARIATES)))
    a = np.asarray(treatment_coefs, dtype=float)
    true_ps = expit(a[0] + X @ a[1:5] + a[5] * U)
    Z = (rng.uniform(size=n) < true_ps).astype(int)
    b = np.asarray(outcome_coefs, dtype=float)
    eps = rng.standard_normal(n)
    Y = b[0] * Z + X @ b[1:5] + b[5] * U + eps
    return SimulatedDataset(coords=loc, X=X, z=Z, covariate_names=list(COVARIATES), y=Y,
                            metric="euclidean", U=U, true_ps=true_ps, seed=seed)


@dataclass(frozen=True)
class MethodSpec:
    """A named method in a simulation: ``dapsm`` or one of the comparator kinds."""

    name: str
    kind: str
    options: Tuple[Tuple[str, object], ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        d = dict(d)
        try:
            name, kind = d.pop("name"), d.pop("kind")
        except KeyError as exc:
            raise InputError(f"method entry missing {exc}") from None
        spec = cls(name=name, kind=kind, options=tuple(sorted(d.items())))
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, **dict(self.options)}

    def validate(self):
        if self.kind == "dapsm":
            self.daps_config()
        elif self.kind == "gold-outcome":
            pass
        else:
            self.comparator_spec()

    def daps_config(self) -> DapsConfig:
        opts = dict(self.options)
        if "w_grid" in opts and opts["w_grid"] is not None:
            opts["w_grid"] = tuple(opts["w_grid"])
        try:
            return DapsConfig(**opts)
        except TypeError as exc:
            raise InputError(f"bad options for method {self.name!r}: {exc}") from None

    def comparator_spec(self) -> comparators.ComparatorSpec:
        try:
            return comparators.ComparatorSpec(kind=self.kind, **dict(self.options))
        except TypeError as exc:
            raise InputError(f"bad options for method {self.name!r}: {exc}") from None


DEFAULT_METHODS = (
    MethodSpec("gold-outcome", "gold-outcome"),
    MethodSpec("gold-ps", "gold-ps"),
    MethodSpec("naive", "naive"),
    MethodSpec("naive-coords", "naive-coords"),
    MethodSpec("distcal-10", "distance-caliper", (("distance_quantile", 0.1),)),
    MethodSpec("dapsm", "dapsm", (("asdm_cutoff", 0.1),)),
)


@dataclass(frozen=True)
class SimulationConfig:
    n_units: int = 400
    nu_grid: Tuple[float, ...] = (0.1, 1.46)
    r_grid: Tuple[float, ...] = (0.1, 1.0)
    n_replicates: int = 50
    methods: Tuple[MethodSpec, ...] = DEFAULT_METHODS
    base_seed: int = 20170101
    location_source: str = "uniform-random"
    location_seed: int = 0
    locations_file: Optional[str] = None
    balance_covariates: Tuple[str, ...] = COVARIATES + ("U",)
    baseline: str = "gold-ps"
    n_jobs: int = 1

    def __post_init__(self):
        if not self.nu_grid or not self.r_grid:
            raise InputError("nu_grid and r_grid must be nonempty")
        if int(self.n_replicates) < 1:
            raise InputError("n_replicates must be at least 1")
        if self.location_source not in ("uniform-random", "file"):
            raise InputError(f"unknown location_source {self.location_source!r}")
        if self.location_source == "file" and not self.locations_file:
            raise InputError("location_source 'file' needs locations_file")
        if self.location_source == "uniform-random" and int(self.n_units) < 2:
            raise InputError("n_units must be at least 2")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise InputError("method names must be unique")
        if self.baseline not in names:
            raise InputError(f"baseline method {self.baseline!r} is not configured")
        for m in self.methods:
            m.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        if not isinstance(d, dict):
            raise InputError("simulation config must be a JSON object")
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        if "methods" in d:
            d["methods"] = tuple(MethodSpec.from_dict(m) for m in d["methods"])
        for key in ("nu_grid", "r_grid", "balance_covariates"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("n_units", "n_replicates", "base_seed", "location_seed", "n_jobs"):
            if key in d:
                if isinstance(d[key], bool) or not isinstance(d[key], int):
                    raise InputError(f"{key} must be an integer")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = [m.to_dict() for m in self.methods]
        for key in ("nu_grid", "r_grid", "balance_covariates"):
            out[key] = list(out[key])
        return out

    def cells(self) -> List[Tuple[float, float]]:
        return [(nu, r) for nu in self.nu_grid for r in self.r_grid]


def load_locations(config: SimulationConfig) -> np.ndarray:
    if config.location_source == "file":
        import pandas as pd

        df = pd.read_csv(config.locations_file, comment="#")
        for pair in (("x", "y"), ("lon", "lat")):
            if set(pair) <= set(df.columns):
                return df[list(pair)].to_numpy(dtype=float)
        raise InputError("locations file needs (x, y) or (lon, lat) columns")
    rng = np.random.default_rng(config.location_seed)
    return rng.uniform(size=(int(config.n_units), 2))


@dataclass
class ReplicateRecord:
    cell: int
    nu: float
    r: float
    replicate: int
    method: str
    status: str
    estimate: float = float("nan")
    n_pairs: int = 0
    n_dropped: int = 0
    mean_pair_distance: float = float("nan")
    chosen_w: float = float("nan")
    asdm: Dict[str, float] = field(default_factory=dict)
    message: str = ""

    @property
    def succeeded(self) -> bool:
        return self.status == "ok"

    @property
    def error(self) -> float:
        return self.estimate - TRUE_ATT


def _run_method(spec: MethodSpec, ds: SimulatedDataset, balance_cols) -> dict:
    out: dict = {}
    if spec.kind == "gold-outcome":
        est = comparators.gold_outcome_estimate(ds)
        return {"status": "ok", "estimate": est.estimate, "n_pairs": int(ds.z.sum())}
    if spec.kind == "dapsm":
        res = dapsm(ds, spec.daps_config(), exhaustive=False)
        matched = res.matched
        out["chosen_w"] = res.w
    else:
        matched = comparators.run_comparator(spec.comparator_spec(), ds)
    out.update(n_pairs=matched.n_pairs, n_dropped=int(matched.dropped_treated.size),
               mean_pair_distance=matched.mean_pair_distance)
    if matched.n_pairs == 0:
        out["status"] = "fail"
        return out
    out["status"] = "ok"
    out["estimate"] = att_diff_means(ds, matched).estimate
    rep = balance_report(ds, matched, covariates=list(balance_cols))
    out["asdm"] = {cb.name: cb.asdm_after for cb in rep.per_covariate}
    return out


def _run_replicate(args) -> List[ReplicateRecord]:
    config, cell_idx, rep, locations, factor = args
    nu, r = config.cells()[cell_idx]
    seed = [int(config.base_seed), cell_idx, rep]
    ds = generate_dataset(locations, MaternParams(nu, r), seed=seed, factor=factor)
    records = []
    for spec in config.methods:
        rec = ReplicateRecord(cell=cell_idx, nu=nu, r=r, replicate=rep, method=spec.name, status="error")
        try:
            for key, val in _run_method(spec, ds, config.balance_covariates).items():
                setattr(rec, key, val)
        except DapsmError as exc:
            rec.status = "fail"
            rec.message = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


@dataclass
class SimulationResult:
    config: SimulationConfig
    records: List[ReplicateRecord]
    summary: List[dict]


def _iqr(values) -> Tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    q1, q3 = np.percentile(values, [25, 75])
    return float(q1), float(q3)


def _finite_mean(values) -> float:
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else float("nan")


def summarize(config: SimulationConfig, records: Sequence[ReplicateRecord]) -> List[dict]:
    """Aggregate per (cell, method).

    MSE and bias use only replicates where the method returned matches; the
    relative MSE divides by the baseline method's MSE over its own successes.
    Dropped-unit statistics also exclude failed replicates.
    """
    by_key: Dict[Tuple[int, str], List[ReplicateRecord]] = {}
    for rec in records:
        by_key.setdefault((rec.cell, rec.method), []).append(rec)

    def mse(recs):
        errs = np.array([x.error for x in recs if x.succeeded])
        return float(np.mean(errs ** 2)) if errs.size else float("nan")

    rows = []
    for cell_idx, (nu, r) in enumerate(config.cells()):
        base = mse(by_key.get((cell_idx, config.baseline), []))
        for spec in config.methods:
            recs = sorted(by_key.get((cell_idx, spec.name), []), key=lambda x: x.replicate)
            ok = [x for x in recs if x.succeeded]
            errs = np.array([x.error for x in ok])
            dropped = [x.n_dropped for x in ok]
            q1, q3 = _iqr(dropped)
            m = mse(recs)
            row = {
                "nu": nu, "r": r, "method": spec.name,
                "n_replicates": len(recs), "n_success": len(ok),
                "mse": m,
                "relative_mse": m / base if base > 0 else float("nan"),
                "bias": float(errs.mean()) if errs.size else float("nan"),
                "abs_bias": float(abs(errs.mean())) if errs.size else float("nan"),
                "fail_pct": 100.0 * (len(recs) - len(ok)) / len(recs) if recs else float("nan"),
                "mean_dropped": float(np.mean(dropped)) if dropped else float("nan"),
                "dropped_q1": q1, "dropped_q3": q3,
                "mean_pair_distance": _finite_mean([x.mean_pair_distance for x in ok])
                if spec.kind != "gold-outcome" else float("nan"),
                "mean_chosen_w": float(np.mean([x.chosen_w for x in ok]))
                if ok and spec.kind == "dapsm" else float("nan"),
            }
            for cov in config.balance_covariates:
                vals = np.array([x.asdm[cov] for x in ok if cov in x.asdm])
                row[f"mean_asdm_{cov}"] = float(vals.mean()) if vals.size else float("nan")
                row[f"median_asdm_{cov}"] = float(np.median(vals)) if vals.size else float("nan")
            rows.append(row)
    return rows


def run_monte_carlo(config: SimulationConfig, progress=None) -> SimulationResult:
    """Run every method on every replicate of every (nu, r) cell.

    Seeds are derived from (base_seed, cell index, replicate index), so the
    result does not depend on execution order or ``n_jobs``.
    """
    locations = load_locations(config)
    tasks = []
    for cell_idx, (nu, r) in enumerate(config.cells()):
        factor = matern_factor(locations, MaternParams(nu, r))
        tasks += [(config, cell_idx, rep, locations, factor) for rep in range(config.n_replicates)]

    records: List[ReplicateRecord] = []
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            for recs in pool.map(_run_replicate, tasks):
                records.extend(recs)
                if progress:
                    progress(recs)
    else:
        for task in tasks:
            recs = _run_replicate(task)
            records.extend(recs)
            if progress:
                progress(recs)
    order = {spec.name: k for k, spec in enumerate(config.methods)}
    records.sort(key=lambda x: (x.cell, x.replicate, order[x.method]))
    return SimulationResult(config=config, records=records, summary=summarize(config, records))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "NA" if np.isnan(v) else repr(v)
    return str(v)


def summary_csv(summary: Sequence[dict]) -> str:
    if not summary:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(summary[0].keys())
    w.writerow(cols)
    for row in summary:
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def summary_json(result: SimulationResult) -> str:
    def clean(v):
        if isinstance(v, float) and np.isnan(v):
            return None
        return v

    payload = {
        "config": result.config.to_dict(),
        "summary": [{k: clean(v) for k, v in row.items()} for row in result.summary],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def records_csv(records: Sequence[ReplicateRecord], covariates: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "nu", "r", "replicate", "method", "status", "estimate", "n_pairs",
                "n_dropped", "mean_pair_distance", "chosen_w"]
               + [f"asdm_{c}" for c in covariates] + ["message"])
    for x in records:
        w.writerow([x.cell, _fmt(x.nu), _fmt(x.r), x.replicate, x.method, x.status,
                    _fmt(x.estimate), x.n_pairs, x.n_dropped, _fmt(x.mean_pair_distance),
                    _fmt(x.chosen_w)]
                   + [_fmt(x.asdm.get(c, float("nan"))) for c in covariates] + [x.message])
    return buf.getvalue()
