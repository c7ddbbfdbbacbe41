"""Monte Carlo efficiency experiments.

For every shape value of a sweep the harness builds the true model, computes
the bounds once, then runs ``R`` independent trials. Trial ``r`` at shape
index ``i`` draws its data from ``RngStream(seed, (i << 32) | r)``, so trials
can run in any order or in parallel; per-trial errors are stored by index
and reduced in a fixed order at the end.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml
from numpy.typing import NDArray

from . import bounds, matcalc
from .errors import InvalidInputError
from .estimators import FixedPointOptions, WeightSpec, cscm, m_estimate_batch
from .res_model import DensityGenerator, RESParams, calibrate_scale, moments, sample_res, toeplitz_scatter
from .special import RngStream

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "build_truth",
    "mse_matrix",
    "run_experiment",
    "write_csv",
    "write_json",
    "read_csv",
    "load_config",
    "figure_config",
    "DEFAULT_T_GRID",
    "DEFAULT_GG_GRID",
]

DEFAULT_T_GRID = (2.1, 3.0, 5.0, 10.0, 20.0, 50.0, 100.0)
DEFAULT_GG_GRID = tuple(round(0.2 * k, 1) for k in range(1, 11))
SCATTER_ESTIMATORS = ("cscm", "tyler", "huber")
FAILURE_FRACTION = 1e-3
CHUNK_SIZE = 256
STREAM_SHIFT = 32


def _family_key(family: str) -> str:
    f = family.lower()
    if f in ("t", "student", "studentt"):
        return "t"
    if f in ("gg", "generalized_gaussian", "generalizedgaussian"):
        return "gg"
    raise InvalidInputError(f"unknown family {family!r} (expected 't' or 'gg')")


@dataclass(frozen=True)
class ExperimentConfig:
    """One shape sweep. ``shapes=None`` selects the family's default grid."""

    family: str = "t"
    shapes: tuple[float, ...] | None = None
    n: int = 8
    m: int = 24
    rho: float = 0.8
    power: float = 4.0
    mu_fill: float = 1.0
    estimators: tuple[str, ...] = SCATTER_ESTIMATORS
    huber_u: tuple[float, ...] = (0.9, 0.5, 0.1)
    runs: int = 10_000
    seed: int = 0
    tolerance: float = 1e-9
    max_iter: int = 1000

    def __post_init__(self) -> None:
        fam = _family_key(self.family)
        object.__setattr__(self, "family", fam)
        shapes = self.shapes
        if shapes is None:
            shapes = DEFAULT_T_GRID if fam == "t" else DEFAULT_GG_GRID
        shapes = tuple(float(s) for s in shapes)
        if not shapes:
            raise InvalidInputError("shape grid is empty")
        if fam == "t" and any(not s > 2 for s in shapes):
            raise InvalidInputError("Student-t shapes must all be > 2")
        if fam == "gg" and any(not s > 0 for s in shapes):
            raise InvalidInputError("GG shapes must all be > 0")
        object.__setattr__(self, "shapes", shapes)
        ests = tuple(str(e).lower() for e in self.estimators)
        unknown = set(ests) - set(SCATTER_ESTIMATORS) - {"sample_mean"}
        if unknown:
            raise InvalidInputError(f"unknown estimators: {sorted(unknown)}")
        # canonical order; sample mean is always reported
        object.__setattr__(self, "estimators", tuple(e for e in SCATTER_ESTIMATORS if e in ests))
        us = tuple(float(u) for u in self.huber_u)
        if any(not 0 < u <= 1 for u in us):
            raise InvalidInputError("Huber u values must lie in (0, 1]")
        object.__setattr__(self, "huber_u", us)
        if self.n < 2:
            raise InvalidInputError("N must be >= 2")
        if self.m <= self.n:
            raise InvalidInputError("M must exceed N")
        if self.runs < 1:
            raise InvalidInputError("run count must be >= 1")
        if not -1 < self.rho < 1:
            raise InvalidInputError("rho must lie in (-1, 1)")
        if not self.power > 0:
            raise InvalidInputError("data power must be positive")
        if self.seed < 0:
            raise InvalidInputError("seed must be non-negative")
        FixedPointOptions(self.tolerance, self.max_iter)

    @property
    def weight_specs(self) -> list[WeightSpec]:
        specs = []
        if "tyler" in self.estimators:
            specs.append(WeightSpec.tyler())
        if "huber" in self.estimators:
            specs.extend(WeightSpec.huber(u) for u in self.huber_u)
        return specs

    @property
    def scatter_labels(self) -> list[str]:
        labels = ["cscm"] if "cscm" in self.estimators else []
        return labels + [w.label for w in self.weight_specs]

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("shapes", "estimators", "huber_u"):
            if key in kwargs and kwargs[key] is not None:
                val = kwargs[key]
                kwargs[key] = tuple(val) if isinstance(val, (list, tuple)) else (val,)
        for key, val in kwargs.items():
            if isinstance(val, Mapping):
                raise InvalidInputError(f"config key {key!r} must not be nested")
        return cls(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a flat ``key: value`` YAML document."""
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) or {}
    if not isinstance(data, Mapping):
        raise InvalidInputError("config file must be a flat key-value mapping")
    return ExperimentConfig.from_mapping(data)


def figure_config(figure: int, runs: int = 10_000, seed: int = 0) -> ExperimentConfig:
    """Preset sweeps: 1-2 Student-t, 3-4 Generalized Gaussian.

    Figures 1 and 3 only need the sample mean; 2 and 4 run all scatter
    estimators.
    """
    if figure not in (1, 2, 3, 4):
        raise InvalidInputError(f"figure must be 1, 2, 3 or 4, got {figure}")
    family = "t" if figure in (1, 2) else "gg"
    estimators = ("sample_mean",) if figure in (1, 3) else SCATTER_ESTIMATORS
    return ExperimentConfig(family=family, estimators=estimators, runs=runs, seed=seed)


@dataclass
class ResultRow:
    shape: float
    eps: dict[str, float]
    eps_ccrb_sigma: float
    eps_cscrb_mu: float
    eps_cscrb_sigma: float
    trials: int
    failures: int
    wall_time: float = 0.0
    se: dict[str, float] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.failures > FAILURE_FRACTION * self.trials


def build_truth(config: ExperimentConfig, shape: float) -> tuple[RESParams, DensityGenerator]:
    sigma0 = toeplitz_scatter(config.n, config.rho)
    params = RESParams(np.full(config.n, float(config.mu_fill)), sigma0, constrained=True)
    return params, calibrate_scale(config.family, shape, config.power, config.n)


def mse_matrix(estimates: Sequence[Sequence[float]] | NDArray[np.float64], truth) -> NDArray[np.float64]:
    """Monte Carlo average of ``(v_r - v0)(v_r - v0)^T``."""
    e = np.atleast_2d(np.asarray(estimates, dtype=np.float64)) - np.asarray(truth, dtype=np.float64)
    if e.shape[0] < 1:
        raise InvalidInputError("need at least one estimate")
    out = e.T @ e / e.shape[0]
    return 0.5 * (out + out.T)


def _frob_with_se(errors: NDArray[np.float64]) -> tuple[float, float]:
    """Frobenius norm of the MSE matrix and its delta-method standard error."""
    r = errors.shape[0]
    mse = mse_matrix(errors, 0.0)
    eps = matcalc.frobenius_norm(mse)
    if r < 2 or eps == 0:
        return eps, 0.0
    infl = np.einsum("ri,ij,rj->r", errors, mse, errors) / eps
    return eps, float(np.std(infl, ddof=1) / math.sqrt(r))


def _trial_stream(seed: int, shape_index: int, trial: int) -> RngStream:
    return RngStream(seed, (shape_index << STREAM_SHIFT) | trial)


def _run_chunk(args) -> tuple[NDArray[np.intp], NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    config, shape_index, trials = args
    trials = np.asarray(trials, dtype=np.intp)
    params, gen = build_truth(config, config.shapes[shape_index])
    n, m = config.n, config.m
    data = np.empty((trials.size, m, n))
    for k, r in enumerate(trials):
        data[k] = sample_res(params, gen, m, _trial_stream(config.seed, shape_index, int(r)))
    mu_hat = data.mean(axis=1)
    mu_err = mu_hat - params.mu

    truth = matcalc.vecs(params.sigma)
    labels = config.scatter_labels
    p = truth.size
    sig_err = np.zeros((trials.size, len(labels), p))
    ok = np.ones((trials.size, len(labels)), dtype=bool)
    col = 0
    if "cscm" in config.estimators:
        for k in range(trials.size):
            est = cscm(data[k], mu_hat[k])
            sig_err[k, col] = matcalc.vecs(est) - truth
        col += 1
    opts = FixedPointOptions(config.tolerance, config.max_iter)
    rows, cols = np.triu_indices(n)
    for spec in config.weight_specs:
        res = m_estimate_batch(data, mu_hat, spec, opts)
        # vecs of each estimate: column-major lower triangle
        sig_err[:, col] = res.sigma[:, cols, rows] - truth
        ok[:, col] = res.ok
        col += 1
    return trials, mu_err, sig_err, ok


def _row_for_shape(
    config: ExperimentConfig,
    shape_index: int,
    workers: int,
    order: Sequence[int] | None,
    chunk_size: int,
) -> ResultRow:
    t0 = time.perf_counter()
    shape = config.shapes[shape_index]
    params, gen = build_truth(config, shape)
    report = bounds.bound_report(params, moments(gen, config.n), config.m)

    r_total = config.runs
    order_arr = np.arange(r_total) if order is None else np.asarray(order, dtype=np.intp)
    if sorted(order_arr.tolist()) != list(range(r_total)):
        raise InvalidInputError("order must be a permutation of the trial indices")
    chunks = [order_arr[i : i + chunk_size] for i in range(0, r_total, chunk_size)]
    tasks = [(config, shape_index, c) for c in chunks]

    labels = config.scatter_labels
    p = matcalc.vecs_size(config.n)
    mu_err = np.empty((r_total, config.n))
    sig_err = np.empty((r_total, len(labels), p))
    ok = np.empty((r_total, len(labels)), dtype=bool)

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    for idx, me, se, okk in results:
        mu_err[idx] = me
        sig_err[idx] = se
        ok[idx] = okk

    good = ok.all(axis=1)
    failures = int(r_total - good.sum())
    eps: dict[str, float] = {}
    ses: dict[str, float] = {}
    eps["mu_sample_mean"], ses["mu_sample_mean"] = _frob_with_se(mu_err)
    for j, label in enumerate(labels):
        if good.any():
            eps[label], ses[label] = _frob_with_se(sig_err[good, j])
        else:
            eps[label], ses[label] = math.nan, math.nan

    row = ResultRow(
        shape=shape,
        eps=eps,
        eps_ccrb_sigma=report.eps_ccrb_sigma,
        eps_cscrb_mu=report.eps_cscrb_mu,
        eps_cscrb_sigma=report.eps_cscrb_sigma,
        trials=r_total,
        failures=failures,
        wall_time=time.perf_counter() - t0,
        se=ses,
    )
    if row.failed:
        logger.warning(
            "shape %g: %d of %d trials failed (limit %.1f%%)",
            shape, failures, r_total, 100 * FAILURE_FRACTION,
        )
    return row


def run_experiment(
    config: ExperimentConfig,
    *,
    workers: int = 1,
    order: Sequence[int] | None = None,
    chunk_size: int = CHUNK_SIZE,
) -> list[ResultRow]:
    """Run the sweep and return one row per shape value.

    ``order`` permutes the trial execution order; results do not depend on
    it, nor on ``workers``.
    """
    rows = []
    for i, shape in enumerate(config.shapes):
        row = _row_for_shape(config, i, workers, order, chunk_size)
        logger.info("shape %g done in %.2fs", shape, row.wall_time)
        rows.append(row)
    return rows


def _columns(rows: Sequence[ResultRow]) -> list[str]:
    est = [k for k in rows[0].eps if k != "mu_sample_mean"]
    return (
        ["shape", "eps_mu_sample_mean"]
        + [f"eps_{k}" for k in est]
        + ["eps_ccrb_sigma", "eps_cscrb_mu", "eps_cscrb_sigma", "trials", "failures"]
    )


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _records(rows: Sequence[ResultRow]) -> list[dict[str, str]]:
    out = []
    for row in rows:
        rec = {"shape": _fmt(row.shape)}
        rec.update({f"eps_{k}": _fmt(v) for k, v in row.eps.items()})
        rec["eps_ccrb_sigma"] = _fmt(row.eps_ccrb_sigma)
        rec["eps_cscrb_mu"] = _fmt(row.eps_cscrb_mu)
        rec["eps_cscrb_sigma"] = _fmt(row.eps_cscrb_sigma)
        rec["trials"] = str(row.trials)
        rec["failures"] = str(row.failures)
        out.append(rec)
    return out


def write_csv(rows: Sequence[ResultRow], path: str | Path) -> None:
    """Header plus one line per shape value, 10 significant digits, LF endings."""
    if not rows:
        raise InvalidInputError("no rows to write")
    cols = _columns(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        writer.writerows(_records(rows))


def write_json(rows: Sequence[ResultRow], path: str | Path) -> None:
    """JSON mirror of :func:`write_csv` carrying the same rounded numbers."""
    if not rows:
        raise InvalidInputError("no rows to write")
    recs = [
        {k: (int(v) if k in ("trials", "failures") else float(v)) for k, v in rec.items()}
        for rec in _records(rows)
    ]
    Path(path).write_text(json.dumps(recs, indent=2) + "\n", encoding="utf-8")


def read_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            {k: (int(v) if k in ("trials", "failures") else float(v)) for k, v in rec.items()}
            for rec in csv.DictReader(fh)
        ]


def config_dict(config: ExperimentConfig) -> dict[str, Any]:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
