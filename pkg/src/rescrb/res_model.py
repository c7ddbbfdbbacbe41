"""Real elliptically symmetric (RES) distributions.

A RES vector is ``x = mu + sqrt(Q) * Sigma^{1/2} u`` with ``u`` uniform on the
unit sphere and ``Q`` the squared Mahalanobis radius. Its density is
``2^{-N/2} |Sigma|^{-1/2} g(Q)`` where the density generator ``g`` carries
the normalizing constant. Two generator families are implemented: Student-t
(shape ``lam``, scale ``eta``) and Generalized Gaussian (shape ``s``, scale
``b``). Both are dimension-aware, so most methods take ``n`` explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import matcalc
from .errors import InvalidInputError, MomentUndefinedError, SingularityError
from .special import RngStream, ln_gamma, sample_gamma, sample_standard_normal

__all__ = [
    "StudentT",
    "GeneralizedGaussian",
    "DensityGenerator",
    "RESParams",
    "ModelMoments",
    "psi",
    "log_g",
    "res_logpdf",
    "q_pdf",
    "moments",
    "calibrate_scale",
    "sample_uniform_sphere",
    "sample_q",
    "sample_res",
    "toeplitz_scatter",
]

_LN_PI = math.log(math.pi)
_LN_2 = math.log(2.0)


@dataclass(frozen=True)
class ModelMoments:
    """Radial moments of a generator at dimension ``n``."""

    n: int
    eQpsi: float
    eQpsi2: float
    eQ2psi2: float
    eQ: float


@dataclass(frozen=True)
class StudentT:
    """Student-t generator, ``g(t) ∝ (lam/eta + t)^{-(lam+N)/2}``.

    ``lam > 2`` is required so that ``E{Q}`` exists.
    """

    lam: float
    eta: float

    family = "t"

    def __post_init__(self) -> None:
        if not self.lam > 2:
            raise InvalidInputError(f"Student-t shape must be > 2, got {self.lam}")
        if not self.eta > 0:
            raise InvalidInputError(f"Student-t scale must be > 0, got {self.eta}")

    @property
    def shape(self) -> float:
        return self.lam

    def log_g(self, t, n: int):
        lam, c = self.lam, self.lam / self.eta
        const = (
            0.5 * n * _LN_2
            + ln_gamma(0.5 * (lam + n))
            - 0.5 * n * _LN_PI
            - ln_gamma(0.5 * lam)
            + 0.5 * lam * math.log(c)
        )
        return const - 0.5 * (lam + n) * np.log(c + np.asarray(t, dtype=float))

    def psi(self, t, n: int):
        t = np.asarray(t, dtype=float)
        return -0.5 * (self.lam + n) / (self.lam / self.eta + t)

    def moments(self, n: int) -> ModelMoments:
        lam, eta = self.lam, self.eta
        return ModelMoments(
            n=n,
            eQpsi=-0.5 * n,
            eQpsi2=eta * n * (lam + n) / (4.0 * (n + lam + 2.0)),
            eQ2psi2=n * (n + 2.0) * (lam + n) / (4.0 * (n + lam + 2.0)),
            eQ=lam * n / (eta * (lam - 2.0)),
        )

    def sample_q(self, n: int, rng: RngStream, size: int):
        # Q / (lam/eta) is beta-prime(N/2, lam/2), i.e. a ratio of gammas
        g1 = sample_gamma(0.5 * n, rng, size)
        g2 = sample_gamma(0.5 * self.lam, rng, size)
        return (self.lam / self.eta) * g1 / g2


@dataclass(frozen=True)
class GeneralizedGaussian:
    """Generalized Gaussian generator, ``g(t) ∝ exp(-t^s / (2b))``.

    ``s = 1, b = 1`` is the standard Gaussian.
    """

    s: float
    b: float

    family = "gg"

    def __post_init__(self) -> None:
        if not self.s > 0:
            raise InvalidInputError(f"GG shape must be > 0, got {self.s}")
        if not self.b > 0:
            raise InvalidInputError(f"GG scale must be > 0, got {self.b}")

    @property
    def shape(self) -> float:
        return self.s

    def log_g(self, t, n: int):
        s, b = self.s, self.b
        const = (
            0.5 * n * _LN_2
            + math.log(s)
            + ln_gamma(0.5 * n)
            - 0.5 * n * _LN_PI
            - (n / (2.0 * s)) * math.log(2.0 * b)
            - ln_gamma(n / (2.0 * s))
        )
        return const - np.asarray(t, dtype=float) ** s / (2.0 * b)

    def psi(self, t, n: int):
        t = np.asarray(t, dtype=float)
        if self.s < 1 and np.any(t == 0):
            raise SingularityError("GG psi is singular at t=0 for s < 1")
        if self.s == 1:
            return np.full_like(t, -0.5 / self.b)
        return -self.s * t ** (self.s - 1.0) / (2.0 * self.b)

    def moments(self, n: int) -> ModelMoments:
        s, b = self.s, self.b
        lg = ln_gamma(n / (2.0 * s))
        return ModelMoments(
            n=n,
            eQpsi=-0.5 * n,
            eQpsi2=s * s * math.exp(ln_gamma((n + 4.0 * s - 2.0) / (2.0 * s)) - lg)
            / (2.0 * b) ** (1.0 / s),
            eQ2psi2=n * (n + 2.0 * s) / 4.0,
            eQ=(2.0 * b) ** (1.0 / s) * math.exp(ln_gamma((n + 2.0) / (2.0 * s)) - lg),
        )

    def sample_q(self, n: int, rng: RngStream, size: int):
        g = sample_gamma(n / (2.0 * self.s), rng, size)
        return (2.0 * self.b * g) ** (1.0 / self.s)


DensityGenerator = Union[StudentT, GeneralizedGaussian]


@dataclass(frozen=True)
class RESParams:
    """Mean vector and scatter matrix; ``constrained`` enforces ``tr = N``."""

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    constrained: bool = False

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = matcalc.check_spd(self.sigma, "scatter matrix")
        if sigma.shape[0] != mu.size:
            raise InvalidInputError(
                f"mean has length {mu.size} but scatter is {sigma.shape[0]}x{sigma.shape[0]}"
            )
        if self.constrained and abs(np.trace(sigma) - mu.size) > 1e-10:
            raise InvalidInputError(f"constrained scatter must have trace {mu.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", 0.5 * (sigma + sigma.T))

    @property
    def n(self) -> int:
        return self.mu.size


def toeplitz_scatter(n: int, rho: float) -> NDArray[np.float64]:
    """``[Sigma]_{ij} = rho^{|i-j|}``; unit diagonal so the trace is ``n``."""
    idx = np.arange(n)
    return float(rho) ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def psi(gen: DensityGenerator, t, n: int):
    """Log-derivative ``g'(t)/g(t)`` of the generator."""
    out = gen.psi(t, n)
    return float(out) if np.ndim(out) == 0 else out


def log_g(gen: DensityGenerator, t, n: int):
    out = gen.log_g(t, n)
    return float(out) if np.ndim(out) == 0 else out


def mahalanobis_sq(params: RESParams, x: ArrayLike) -> NDArray[np.float64] | float:
    x = np.asarray(x, dtype=np.float64)
    d = x - params.mu
    y = np.linalg.solve(params.sigma, d.T).T
    q = np.sum(d * y, axis=-1)
    return float(q) if q.ndim == 0 else q


def res_logpdf(params: RESParams, gen: DensityGenerator, x: ArrayLike):
    """Log-density at ``x`` (one point or a stack of rows)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n:
        raise InvalidInputError(f"x has dimension {x.shape[-1]}, expected {params.n}")
    _, logdet = np.linalg.slogdet(params.sigma)
    q = mahalanobis_sq(params, x)
    out = -0.5 * params.n * _LN_2 - 0.5 * logdet + gen.log_g(q, params.n)
    return float(out) if np.ndim(out) == 0 else out


def q_pdf(gen: DensityGenerator, n: int, q):
    """Density of the squared Mahalanobis radius ``Q``."""
    q = np.asarray(q, dtype=float)
    log_sn = _LN_2 + 0.5 * n * _LN_PI - ln_gamma(0.5 * n)
    inside = (q > 0) & np.isfinite(q)
    qq = np.where(inside, q, 1.0)
    logp = log_sn - (0.5 * n + 1.0) * _LN_2 + (0.5 * n - 1.0) * np.log(qq) + gen.log_g(qq, n)
    out = np.where(inside, np.exp(logp), 0.0)
    return float(out) if out.ndim == 0 else out


def moments(gen: DensityGenerator, n: int) -> ModelMoments:
    """Closed-form ``E{Qψ}``, ``E{Qψ²}``, ``E{Q²ψ²}`` and ``E{Q}``."""
    if isinstance(gen, StudentT) and not gen.lam > 2:
        raise MomentUndefinedError("E{Q} is infinite for lam <= 2")
    return gen.moments(n)


def calibrate_scale(family: str, shape: float, sigma2: float, n: int) -> DensityGenerator:
    """Generator whose data power ``E{Q}/N`` equals ``sigma2``."""
    if not sigma2 > 0:
        raise InvalidInputError("data power must be positive")
    family = family.lower()
    if family in ("t", "student", "studentt"):
        if not shape > 2:
            raise MomentUndefinedError(f"Student-t shape must be > 2, got {shape}")
        return StudentT(lam=shape, eta=shape / (sigma2 * (shape - 2.0)))
    if family in ("gg", "generalized_gaussian", "generalizedgaussian"):
        s = float(shape)
        ratio = math.exp(ln_gamma(n / (2.0 * s)) - ln_gamma((n + 2.0) / (2.0 * s)))
        return GeneralizedGaussian(s=s, b=0.5 * (sigma2 * n * ratio) ** s)
    raise InvalidInputError(f"unknown family {family!r}")


def sample_uniform_sphere(n: int, rng: RngStream, size: int | None = None):
    """Uniform draw(s) on the unit sphere via normalized Gaussian vectors."""
    shape = (n,) if size is None else (size, n)
    z = sample_standard_normal(rng, shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def sample_q(gen: DensityGenerator, n: int, rng: RngStream, size: int | None = None):
    out = gen.sample_q(n, rng, 1 if size is None else size)
    return float(out[0]) if size is None else out


def sample_res(params: RESParams, gen: DensityGenerator, m: int, rng: RngStream):
    """``m`` i.i.d. rows ``mu + sqrt(Q) Sigma^{1/2} u``."""
    n = params.n
    q = gen.sample_q(n, rng, m)
    u = sample_uniform_sphere(n, rng, m)
    root = matcalc.sym_sqrt(params.sigma)
    return params.mu + np.sqrt(q)[:, None] * (u @ root)
