"""Scores, Fisher information blocks and constrained Cramér-Rao bounds.

Parameters are ordered ``(mu, vecs(Sigma))``. The mean and scatter blocks of
both the classical FIM and the semiparametric FIM are decoupled, so the
bounds are computed block by block. The trace constraint only touches the
scatter block, through the indicator of the diagonal positions of ``vecs``.

Bounds are reported per dataset of ``M`` i.i.d. samples, i.e. the per-sample
information is multiplied by ``M`` before inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import matcalc
from .errors import InvalidInputError, NumericalRankError
from .res_model import DensityGenerator, ModelMoments, RESParams

__all__ = [
    "BoundReport",
    "score_mu",
    "score_sigma",
    "efficient_score_sigma",
    "projection_sigma",
    "a_coefficients",
    "fim_blocks",
    "sfim_sigma_block",
    "trace_constraint_basis",
    "constrained_inverse",
    "ccrb",
    "cscrb",
    "bound_report",
    "bound_indices",
]

COND_LIMIT = 1e12


def _centered(params: RESParams, x: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n:
        raise InvalidInputError(f"x has dimension {x.shape[-1]}, expected {params.n}")
    return x - params.mu


def _dt_vec(a: NDArray[np.float64]) -> NDArray[np.float64]:
    """``D_N^T vec(A)`` for a stack of ``(..., N, N)`` matrices."""
    n = a.shape[-1]
    flat = np.swapaxes(a, -1, -2).reshape(a.shape[:-2] + (n * n,))
    return flat @ matcalc.duplication_matrix(n)


def score_mu(params: RESParams, gen: DensityGenerator, x: ArrayLike):
    """``-2 psi(Q) Sigma^{-1} (x - mu)``; ``x`` may be a stack of rows."""
    d = _centered(params, x)
    y = np.linalg.solve(params.sigma, d.T).T
    q = np.sum(d * y, axis=-1)
    return -2.0 * np.asarray(gen.psi(q, params.n))[..., None] * y


def score_sigma(params: RESParams, gen: DensityGenerator, x: ArrayLike):
    """Gradient of the log-density with respect to ``vecs(Sigma)``."""
    d = _centered(params, x)
    sinv = np.linalg.inv(params.sigma)
    y = d @ sinv
    q = np.sum(d * y, axis=-1)
    p = np.asarray(gen.psi(q, params.n))
    outer = y[..., :, None] * y[..., None, :]
    return -_dt_vec(0.5 * sinv + p[..., None, None] * outer)


def projection_sigma(params: RESParams, gen: DensityGenerator, x: ArrayLike):
    """Projection of the scatter score onto the nuisance tangent space.

    ``-D_N^T (1/2 + Q psi(Q) / N) vec(Sigma^{-1})``.
    """
    d = _centered(params, x)
    n = params.n
    sinv = np.linalg.inv(params.sigma)
    q = np.sum(d * (d @ sinv), axis=-1)
    coef = 0.5 + q * np.asarray(gen.psi(q, n)) / n
    return -coef[..., None] * _dt_vec(sinv)


def efficient_score_sigma(params: RESParams, gen: DensityGenerator, x: ArrayLike):
    """Semiparametric efficient score of ``vecs(Sigma)``.

    Built from the normalized direction ``u = Sigma^{-1/2}(x - mu)/sqrt(Q)``;
    returns zero at ``x = mu``.
    """
    d = _centered(params, x)
    n = params.n
    sinv = np.linalg.inv(params.sigma)
    isqrt = matcalc.sym_inv_sqrt(params.sigma)
    z = d @ isqrt
    q = np.sum(z * z, axis=-1)
    safe_q = np.where(q > 0, q, 1.0)
    qpsi = np.where(q > 0, q * np.asarray(gen.psi(safe_q, n)), 0.0)
    u = z / np.sqrt(safe_q)[..., None]
    w = u @ isqrt
    inner = w[..., :, None] * w[..., None, :] - sinv / n
    return -qpsi[..., None] * _dt_vec(inner)


def a_coefficients(mom: ModelMoments, n: int | None = None) -> tuple[float, float]:
    n = mom.n if n is None else n
    a2 = 2.0 * mom.eQ2psi2 / (n * (n + 2.0))
    a1 = 0.25 + mom.eQpsi / n + 0.5 * a2
    return a1, a2


def _inv_parts(params: RESParams):
    n = params.n
    sinv = np.linalg.inv(params.sigma)
    sinv = 0.5 * (sinv + sinv.T)
    dn = matcalc.duplication_matrix(n)
    v = dn.T @ matcalc.vec(sinv)
    kk = dn.T @ np.kron(sinv, sinv) @ dn
    return sinv, v, kk


def fim_blocks(params: RESParams, mom: ModelMoments):
    """Per-sample classical FIM blocks ``(C_mu, C_sigma)``."""
    n = params.n
    sinv, v, kk = _inv_parts(params)
    a1, a2 = a_coefficients(mom, n)
    c_mu = 4.0 * mom.eQpsi2 / n * sinv
    c_sigma = a1 * np.outer(v, v) + a2 * kk
    return c_mu, 0.5 * (c_sigma + c_sigma.T)


def sfim_sigma_block(params: RESParams, mom: ModelMoments):
    """Per-sample semiparametric FIM of ``vecs(Sigma)``.

    Singular: ``vecs(Sigma)`` spans its null space (scale ambiguity).
    """
    n = params.n
    _, v, kk = _inv_parts(params)
    coef = 2.0 * mom.eQ2psi2 / (n * (n + 2.0))
    out = coef * (kk - np.outer(v, v) / n)
    return 0.5 * (out + out.T)


def trace_constraint_basis(n: int) -> NDArray[np.float64]:
    """Orthonormal basis of directions in ``vecs`` space preserving the trace."""
    return matcalc.nullspace_basis(matcalc.diag_indicator(n), matcalc.vecs_size(n) - 1)


def _spd_inverse(a: NDArray[np.float64]) -> NDArray[np.float64]:
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if not w[0] > 0 or w[-1] / w[0] > COND_LIMIT:
        raise NumericalRankError(
            f"information matrix is numerically rank deficient (eigenvalues {w[0]:.3e}..{w[-1]:.3e})"
        )
    out = (v / w) @ v.T
    return 0.5 * (out + out.T)


def constrained_inverse(info: NDArray[np.float64], basis: NDArray[np.float64]) -> NDArray[np.float64]:
    """``U (U^T I U)^{-1} U^T``."""
    out = basis @ _spd_inverse(basis.T @ info @ basis) @ basis.T
    return 0.5 * (out + out.T)


def _check_m(m: int) -> None:
    if m < 1:
        raise InvalidInputError("sample count M must be >= 1")


def ccrb(params: RESParams, mom: ModelMoments, m: int = 1, basis: NDArray[np.float64] | None = None):
    """Constrained classical CRB blocks ``(mu, vecs(Sigma))`` for ``m`` samples."""
    _check_m(m)
    u = trace_constraint_basis(params.n) if basis is None else basis
    c_mu, c_sigma = fim_blocks(params, mom)
    return _spd_inverse(m * c_mu), constrained_inverse(m * c_sigma, u)


def cscrb(params: RESParams, mom: ModelMoments, m: int = 1, basis: NDArray[np.float64] | None = None):
    """Constrained semiparametric CRB blocks ``(mu, vecs(Sigma))`` for ``m`` samples."""
    _check_m(m)
    u = trace_constraint_basis(params.n) if basis is None else basis
    mu_block = params.n / (4.0 * mom.eQpsi2) * params.sigma / m
    return mu_block, constrained_inverse(m * sfim_sigma_block(params, mom), u)


@dataclass(frozen=True)
class BoundReport:
    ccrb_mu: NDArray[np.float64]
    ccrb_sigma: NDArray[np.float64]
    cscrb_mu: NDArray[np.float64]
    cscrb_sigma: NDArray[np.float64]
    m: int
    eps_ccrb_sigma: float
    eps_cscrb_mu: float
    eps_cscrb_sigma: float


def bound_report(params: RESParams, mom: ModelMoments, m: int = 1) -> BoundReport:
    u = trace_constraint_basis(params.n)
    c_mu, c_sigma = ccrb(params, mom, m, u)
    s_mu, s_sigma = cscrb(params, mom, m, u)
    return BoundReport(
        ccrb_mu=c_mu,
        ccrb_sigma=c_sigma,
        cscrb_mu=s_mu,
        cscrb_sigma=s_sigma,
        m=m,
        eps_ccrb_sigma=matcalc.frobenius_norm(c_sigma),
        eps_cscrb_mu=matcalc.frobenius_norm(s_mu),
        eps_cscrb_sigma=matcalc.frobenius_norm(s_sigma),
    )


def bound_indices(report: BoundReport) -> dict[str, float]:
    return {
        "eps_ccrb_mu": matcalc.frobenius_norm(report.ccrb_mu),
        "eps_ccrb_sigma": matcalc.frobenius_norm(report.ccrb_sigma),
        "eps_cscrb_mu": matcalc.frobenius_norm(report.cscrb_mu),
        "eps_cscrb_sigma": matcalc.frobenius_norm(report.cscrb_sigma),
    }
