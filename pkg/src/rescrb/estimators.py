"""Mean and trace-constrained scatter estimators.

All scatter estimators return matrices normalized to ``tr = N``. The
M-estimators (Tyler, Huber) run the fixed-point iteration

    S      = M^{-1} sum_m phi(t_m) xbar_m xbar_m^T,  t_m = xbar_m^T Sigma^{-1} xbar_m
    Sigma <- N S / tr(S)

from ``Sigma = I``. A batched driver runs many independent datasets at once;
the single-dataset API goes through it with a batch of one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    ConvergenceError,
    DegenerateDataError,
    InvalidInputError,
    SingularityError,
)
from .special import chi2_cdf, chi2_quantile, chi2_sf

logger = logging.getLogger(__name__)

__all__ = [
    "WeightSpec",
    "FixedPointOptions",
    "BatchResult",
    "sample_mean",
    "cscm",
    "huber_constants",
    "weight",
    "m_estimate",
    "m_estimate_batch",
]

TYLER_MIN_T = 1e-300


@dataclass(frozen=True)
class WeightSpec:
    kind: str
    u: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("tyler", "huber"):
            raise InvalidInputError(f"unknown weight kind {self.kind!r}")
        if self.kind == "huber":
            if self.u is None or not 0.0 < self.u <= 1.0:
                raise InvalidInputError(f"Huber tuning u must lie in (0, 1], got {self.u!r}")

    @classmethod
    def tyler(cls) -> "WeightSpec":
        return cls("tyler")

    @classmethod
    def huber(cls, u: float) -> "WeightSpec":
        return cls("huber", float(u))

    @property
    def label(self) -> str:
        return "tyler" if self.kind == "tyler" else f"hub_{self.u:g}"


@dataclass(frozen=True)
class FixedPointOptions:
    tolerance: float = 1e-9
    max_iter: int = 1000

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be positive")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be at least 1")


def _as_data(x: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"data must be an (M, N) array, got shape {x.shape}")
    if x.shape[0] < 1:
        raise InvalidInputError("data must contain at least one sample")
    return x


def sample_mean(x: ArrayLike) -> NDArray[np.float64]:
    x = _as_data(x)
    return x.mean(axis=0)


def cscm(x: ArrayLike, mu_hat: ArrayLike) -> NDArray[np.float64]:
    """Sample covariance about ``mu_hat``, rescaled to trace ``N``."""
    x = _as_data(x)
    xc = x - np.asarray(mu_hat, dtype=np.float64)
    m, n = xc.shape
    scm = xc.T @ xc / m
    tr = np.trace(scm)
    if not tr > 0:
        raise DegenerateDataError("all samples coincide with the mean estimate")
    out = n * scm / tr
    return 0.5 * (out + out.T)


@lru_cache(maxsize=None)
def huber_constants(n: int, u: float) -> tuple[float, float]:
    """Threshold ``delta^2`` (the ``u``-quantile of chi2_N) and scaling ``b``.

    ``b = F_{N+2}(delta^2) + delta^2 (1 - F_N(delta^2)) / N``; ``u = 1`` gives
    ``delta^2 = inf`` and ``b = 1``.
    """
    if not 0.0 < u <= 1.0:
        raise InvalidInputError(f"Huber tuning u must lie in (0, 1], got {u!r}")
    if u == 1.0:
        return math.inf, 1.0
    delta2 = chi2_quantile(u, n)
    b = chi2_cdf(delta2, n + 2) + delta2 * chi2_sf(delta2, n) / n
    return delta2, b


def weight(spec: WeightSpec, t, n: int):
    """Weight function phi(t) of the M-estimator."""
    t = np.asarray(t, dtype=np.float64)
    if spec.kind == "tyler":
        if np.any(t < TYLER_MIN_T):
            raise SingularityError("Tyler weight is singular at t = 0")
        out = n / t
    else:
        if np.any(t < 0):
            raise InvalidInputError("Huber weight requires t >= 0")
        out = _huber_weight(t, *huber_constants(n, spec.u))
    return float(out) if out.ndim == 0 else out


def _huber_weight(t: NDArray[np.float64], delta2: float, b: float) -> NDArray[np.float64]:
    with np.errstate(divide="ignore"):
        return np.where(t <= delta2, 1.0 / b, delta2 / (np.maximum(t, 1e-300) * b))


@dataclass
class BatchResult:
    """Outcome of :func:`m_estimate_batch` for ``B`` datasets."""

    sigma: NDArray[np.float64]  # (B, N, N)
    iterations: NDArray[np.int64]
    residual: NDArray[np.float64]
    converged: NDArray[np.bool_]
    singular: NDArray[np.bool_]
    monotone_tail: NDArray[np.bool_]

    @property
    def ok(self) -> NDArray[np.bool_]:
        return self.converged & ~self.singular


def m_estimate_batch(
    x: ArrayLike,
    mu_hat: ArrayLike,
    spec: WeightSpec,
    opts: FixedPointOptions | None = None,
) -> BatchResult:
    """Run the constrained M-estimator on a stack of datasets ``(B, M, N)``.

    Datasets are iterated independently; once one converges its iterate is
    frozen, so each result matches a stand-alone run. Failures are flagged
    rather than raised.
    """
    opts = opts or FixedPointOptions()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidInputError(f"batched data must have shape (B, M, N), got {x.shape}")
    nb, m, n = x.shape
    if m < n:
        raise InvalidInputError(f"need at least N={n} samples, got M={m}")
    mu_hat = np.broadcast_to(np.asarray(mu_hat, dtype=np.float64), (nb, n))
    xc = x - mu_hat[:, None, :]

    sigma = np.broadcast_to(np.eye(n), (nb, n, n)).copy()
    iterations = np.zeros(nb, dtype=np.int64)
    residual = np.full(nb, np.inf)
    converged = np.zeros(nb, dtype=bool)
    singular = np.zeros(nb, dtype=bool)
    monotone = np.ones(nb, dtype=bool)

    if spec.kind == "huber":
        delta2, b = huber_constants(n, spec.u)
    else:
        # zero-norm centered samples make the Tyler weight blow up
        singular = np.any(np.einsum("bmn,bmn->bm", xc, xc) < TYLER_MIN_T, axis=1)

    active = np.flatnonzero(~singular)
    for k in range(1, opts.max_iter + 1):
        if active.size == 0:
            break
        xa = xc[active]
        sa = sigma[active]
        try:
            y = np.linalg.solve(sa, xa.transpose(0, 2, 1))
        except np.linalg.LinAlgError:
            y = _solve_each(sa, xa.transpose(0, 2, 1))
        bad = ~np.all(np.isfinite(y), axis=(1, 2))
        t = np.sum(xa * y.transpose(0, 2, 1), axis=-1)
        if spec.kind == "tyler":
            bad |= np.any(t < TYLER_MIN_T, axis=1)
            w = n / np.where(t < TYLER_MIN_T, 1.0, t)
        else:
            w = _huber_weight(t, delta2, b)
        s = (xa * w[:, :, None]).transpose(0, 2, 1) @ xa / m
        s = 0.5 * (s + s.transpose(0, 2, 1))
        tr = np.trace(s, axis1=1, axis2=2)
        bad |= ~(tr > 0)
        new = n * s / np.where(tr > 0, tr, 1.0)[:, None, None]
        res = np.linalg.norm(new - sa, axis=(1, 2)) / np.linalg.norm(sa, axis=(1, 2))

        if k > 10:
            monotone[active] &= res <= residual[active]
        good = ~bad
        sigma[active[good]] = new[good]
        residual[active[good]] = res[good]
        iterations[active] = k
        singular[active[bad]] = True
        done = good & (res <= opts.tolerance)
        converged[active[done]] = True
        active = active[good & ~done]

    return BatchResult(sigma, iterations, residual, converged, singular, monotone)


def _solve_each(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.full(b.shape, np.nan)
    for i in range(a.shape[0]):
        try:
            out[i] = np.linalg.solve(a[i], b[i])
        except np.linalg.LinAlgError:
            pass
    return out


def m_estimate(
    x: ArrayLike,
    mu_hat: ArrayLike,
    spec: WeightSpec,
    opts: FixedPointOptions | None = None,
) -> NDArray[np.float64]:
    """Constrained Tyler or Huber scatter estimate of one dataset.

    Raises
    ------
    SingularityError
        A centered sample is zero (Tyler) or an iterate became singular.
    ConvergenceError
        The relative Frobenius change did not fall below the tolerance.
    """
    x = _as_data(x)
    res = m_estimate_batch(x[None], np.asarray(mu_hat, dtype=np.float64)[None], spec, opts)
    if res.singular[0]:
        raise SingularityError("fixed-point iteration hit a singular configuration")
    if not res.converged[0]:
        raise ConvergenceError(
            f"{spec.label} did not converge in {res.iterations[0]} iterations "
            f"(residual {res.residual[0]:.3e})",
            last_iterate=res.sigma[0],
            residual=float(res.residual[0]),
            iterations=int(res.iterations[0]),
        )
    if not res.monotone_tail[0]:
        logger.warning("%s: fixed-point residual was not monotone in the tail", spec.label)
    return res.sigma[0]
