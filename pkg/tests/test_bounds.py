import math

import numpy as np
import pytest

from rescrb import matcalc
from rescrb.bounds import (
    a_coefficients,
    bound_indices,
    bound_report,
    ccrb,
    cscrb,
    efficient_score_sigma,
    fim_blocks,
    projection_sigma,
    score_mu,
    score_sigma,
    sfim_sigma_block,
    trace_constraint_basis,
)
from rescrb.errors import InvalidInputError
from rescrb.res_model import (
    GeneralizedGaussian,
    RESParams,
    StudentT,
    calibrate_scale,
    moments,
    res_logpdf,
    sample_res,
    toeplitz_scatter,
)
from rescrb.special import RngStream

SCORE_FAMILIES = [
    StudentT(5.0, 5 / 12),
    GeneralizedGaussian(0.7, 1.5),
    GeneralizedGaussian(1.0, 2.0),
    GeneralizedGaussian(2.0, 4.0),
]


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def fd_score_mu(params, gen, x, h=1e-6):
    out = np.empty(params.n)
    for i in range(params.n):
        e = np.zeros(params.n)
        e[i] = h
        up = res_logpdf(RESParams(params.mu + e, params.sigma), gen, x)
        dn = res_logpdf(RESParams(params.mu - e, params.sigma), gen, x)
        out[i] = (up - dn) / (2 * h)
    return out


def fd_score_sigma(params, gen, x, h=1e-6):
    theta = matcalc.vecs(params.sigma)
    out = np.empty(theta.size)
    for k in range(theta.size):
        e = np.zeros(theta.size)
        e[k] = h
        up = res_logpdf(RESParams(params.mu, matcalc.unvecs(theta + e)), gen, x)
        dn = res_logpdf(RESParams(params.mu, matcalc.unvecs(theta - e)), gen, x)
        out[k] = (up - dn) / (2 * h)
    return out


def score_fd_errors(gen, points=100, n=4, seed=0):
    rng = np.random.default_rng(seed)
    params = RESParams(rng.standard_normal(n), toeplitz_scatter(n, 0.6))
    worst = 0.0
    x_all = sample_res(params, gen, points, RngStream(seed, 77))
    for x in x_all:
        worst = max(
            worst,
            _rel(score_mu(params, gen, x), fd_score_mu(params, gen, x)),
            _rel(score_sigma(params, gen, x), fd_score_sigma(params, gen, x)),
        )
    return worst


@pytest.mark.parametrize("gen", SCORE_FAMILIES, ids=lambda g: f"{g.family}-{g.shape:g}")
def test_scores_match_finite_differences(gen):
    assert score_fd_errors(gen) <= 1e-5


def test_scores_vectorized_over_rows(toeplitz8):
    gen = StudentT(5.0, 5 / 12)
    x = sample_res(toeplitz8, gen, 7, RngStream(1, 0))
    stack = score_sigma(toeplitz8, gen, x)
    for k in range(7):
        np.testing.assert_allclose(stack[k], score_sigma(toeplitz8, gen, x[k]), rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(score_mu(toeplitz8, gen, x)[k], score_mu(toeplitz8, gen, x[k]), rtol=1e-13)


def test_gaussian_scores():
    gen = GeneralizedGaussian(1.0, 1.0)
    params = RESParams(np.array([1.0, 2.0, 3.0]), np.eye(3))
    x = params.mu + np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(score_mu(params, gen, x), [1.0, 0.0, 0.0], atol=1e-15)
    # d/dSigma of -1/2 log|S| - 1/2 d^T S^{-1} d at S=I: (dd^T - I)/2
    g = 0.5 * (np.outer(x - params.mu, x - params.mu) - np.eye(3))
    expected = matcalc.duplication_matrix(3).T @ matcalc.vec(g)
    np.testing.assert_allclose(score_sigma(params, gen, x), expected, atol=1e-15)
    np.testing.assert_array_equal(score_mu(params, gen, params.mu), np.zeros(3))


def test_efficient_score_two_routes(toeplitz8, rng):
    for gen in SCORE_FAMILIES:
        x = toeplitz8.mu + rng.standard_normal((50, 8)) * 2
        direct = efficient_score_sigma(toeplitz8, gen, x)
        other = score_sigma(toeplitz8, gen, x) - projection_sigma(toeplitz8, gen, x)
        assert np.max(np.abs(direct - other)) <= 1e-12 * np.max(np.abs(other))


def test_efficient_score_zero_at_mean(toeplitz8):
    out = efficient_score_sigma(toeplitz8, StudentT(5.0, 1.0), toeplitz8.mu)
    np.testing.assert_array_equal(out, np.zeros(36))


def test_scores_zero_mean_and_orthogonality(toeplitz8):
    gen = calibrate_scale("t", 5.0, 4.0, 8)
    x = sample_res(toeplitz8, gen, 100_000, RngStream(2, 0))
    q = np.sum((x - toeplitz8.mu) * np.linalg.solve(toeplitz8.sigma, (x - toeplitz8.mu).T).T, axis=1)
    h = q - moments(gen, 8).eQ
    s = score_sigma(toeplitz8, gen, x)
    eff = efficient_score_sigma(toeplitz8, gen, x)
    for arr in (s, eff, score_mu(toeplitz8, gen, x), eff * h[:, None]):
        mean = arr.mean(axis=0)
        se = arr.std(axis=0) / math.sqrt(arr.shape[0])
        assert np.all(np.abs(mean) <= 4.5 * se + 1e-12)


def test_a_coefficient_examples():
    a1, a2 = a_coefficients(moments(StudentT(5.0, 5 / 12), 8))
    assert a1 == pytest.approx(-1 / 30, rel=1e-12) and a2 == pytest.approx(13 / 30, rel=1e-12)
    a1, a2 = a_coefficients(moments(GeneralizedGaussian(1.0, 3.0), 8))
    assert a1 == pytest.approx(0, abs=1e-15) and a2 == pytest.approx(0.5, rel=1e-15)
    a1, a2 = a_coefficients(moments(GeneralizedGaussian(2.0, 0.5), 8))
    assert a1 == pytest.approx(1 / 20, rel=1e-12) and a2 == pytest.approx(12 / 20, rel=1e-12)


@pytest.mark.parametrize("n", [2, 5, 8])
@pytest.mark.parametrize("shape", [2.5, 5.0, 40.0])
def test_a_coefficients_t_closed_form(n, shape):
    a1, a2 = a_coefficients(moments(StudentT(shape, 0.9), n))
    assert a1 == pytest.approx(-1 / (2 * (n + shape + 2)), rel=1e-12)
    assert a2 == pytest.approx((shape + n) / (2 * (n + shape + 2)), rel=1e-12)


@pytest.mark.parametrize("n", [2, 5, 8])
@pytest.mark.parametrize("shape", [0.3, 1.0, 3.0])
def test_a_coefficients_gg_closed_form(n, shape):
    a1, a2 = a_coefficients(moments(GeneralizedGaussian(shape, 0.9), n))
    assert a1 == pytest.approx((shape - 1) / (2 * (n + 2)), rel=1e-12, abs=1e-15)
    assert a2 == pytest.approx((n + 2 * shape) / (2 * (n + 2)), rel=1e-12)


def test_gaussian_limit_of_a_coefficients():
    a1, a2 = a_coefficients(moments(calibrate_scale("t", 1e3, 4.0, 8), 8))
    assert abs(a1) < 1e-3 and abs(a2 - 0.5) < 1e-2


def test_gaussian_fim_blocks():
    params = RESParams(np.zeros(4), np.eye(4))
    c_mu, c_sigma = fim_blocks(params, moments(GeneralizedGaussian(1, 1), 4))
    np.testing.assert_allclose(c_mu, np.eye(4), atol=1e-15)
    d = matcalc.duplication_matrix(4)
    np.testing.assert_allclose(c_sigma, 0.5 * d.T @ d, atol=1e-15)


def fim_mc_errors(params, gen, draws=100_000, seed=3):
    mom = moments(gen, params.n)
    x = sample_res(params, gen, draws, RngStream(seed, 0))
    s_mu = score_mu(params, gen, x)
    s_sig = score_sigma(params, gen, x)
    eff = efficient_score_sigma(params, gen, x)
    c_mu, c_sigma = fim_blocks(params, mom)
    return (
        _rel(s_mu.T @ s_mu / draws, c_mu),
        _rel(s_sig.T @ s_sig / draws, c_sigma),
        _rel(eff.T @ eff / draws, sfim_sigma_block(params, mom)),
    )


def test_fim_sfim_monte_carlo(toeplitz8):
    gen = calibrate_scale("t", 5.0, 4.0, 8)
    assert max(fim_mc_errors(toeplitz8, gen)) <= 0.02


def test_fim_sfim_monte_carlo_gg(toeplitz8):
    gen = calibrate_scale("gg", 0.6, 4.0, 8)
    assert max(fim_mc_errors(toeplitz8, gen, seed=4)) <= 0.02


def structural_errors(params, mom, seed=0):
    n = params.n
    sfim = sfim_sigma_block(params, mom)
    theta = matcalc.vecs(params.sigma)
    null_err = np.linalg.norm(sfim @ theta) / (np.linalg.norm(sfim) * np.linalg.norm(theta))

    a1, a2 = a_coefficients(mom, n)
    v = matcalc.duplication_matrix(n).T @ matcalc.vec(np.linalg.inv(params.sigma))
    gap_expected = (a1 + a2 / n) * np.outer(v, v)
    gap_err = _rel(fim_blocks(params, mom)[1] - sfim, gap_expected)

    u = trace_constraint_basis(n)
    r, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((u.shape[1],) * 2))
    rot_err = max(
        _rel(ccrb(params, mom, 24, u @ r)[1], ccrb(params, mom, 24, u)[1]),
        _rel(cscrb(params, mom, 24, u @ r)[1], cscrb(params, mom, 24, u)[1]),
    )
    return null_err, gap_err, rot_err


@pytest.mark.parametrize("gen", [StudentT(5.0, 5 / 12), StudentT(30.0, 2.0), GeneralizedGaussian(0.4, 1.0)],
                         ids=lambda g: f"{g.family}-{g.shape:g}")
def test_structural_identities(toeplitz8, gen):
    assert max(structural_errors(toeplitz8, moments(gen, 8))) <= 1e-10


def test_t_gap_scalar():
    for lam in (3.0, 10.0):
        a1, a2 = a_coefficients(moments(StudentT(lam, 1.0), 8))
        assert a1 + a2 / 8 == pytest.approx(lam / (2 * 8 * (8 + lam + 2)), rel=1e-12)


def _lagrange_bound(info, n):
    """Constrained bound through the indicator gradient J (independent route)."""
    j = matcalc.diag_indicator(n)[None, :]
    a = np.linalg.inv(info + j.T @ j)
    return a - a @ j.T @ np.linalg.inv(j @ a @ j.T) @ j @ a


def test_constrained_bounds_against_lagrange_route(toeplitz8):
    mom = moments(StudentT(5.0, 5 / 12), 8)
    c_sig = ccrb(toeplitz8, mom, 3)[1]
    s_sig = cscrb(toeplitz8, mom, 3)[1]
    assert _rel(c_sig, _lagrange_bound(3 * fim_blocks(toeplitz8, mom)[1], 8)) < 1e-9
    assert _rel(s_sig, _lagrange_bound(3 * sfim_sigma_block(toeplitz8, mom), 8)) < 1e-9
    ind = matcalc.diag_indicator(8)
    assert np.linalg.norm(ind @ c_sig) < 1e-10 * np.linalg.norm(c_sig)


def test_scaling_laws(toeplitz8):
    mom = moments(StudentT(5.0, 5 / 12), 8)
    c1, s1 = ccrb(toeplitz8, mom, 1), cscrb(toeplitz8, mom, 1)
    c2, s2 = ccrb(toeplitz8, mom, 2), cscrb(toeplitz8, mom, 2)
    for a, b in zip(c1 + s1, c2 + s2):
        np.testing.assert_allclose(b, a / 2, rtol=1e-10, atol=1e-12 * np.abs(a).max())
    scaled = RESParams(toeplitz8.mu, 3.0 * toeplitz8.sigma)
    ref = fim_blocks(toeplitz8, mom)[0] / 3
    np.testing.assert_allclose(fim_blocks(scaled, mom)[0], ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
    with pytest.raises(InvalidInputError):
        ccrb(toeplitz8, mom, 0)


@pytest.mark.parametrize("lam", [3.0, 5.0, 10.0, 30.0])
def test_loewner_ordering(toeplitz8, lam):
    report = bound_report(toeplitz8, moments(calibrate_scale("t", lam, 4.0, 8), 8), 24)
    diff = report.cscrb_sigma - report.ccrb_sigma
    assert np.linalg.eigvalsh(diff)[0] >= -1e-10
    assert report.eps_cscrb_sigma >= report.eps_ccrb_sigma
    for mat in (report.ccrb_mu, report.ccrb_sigma, report.cscrb_mu, report.cscrb_sigma):
        np.testing.assert_array_equal(mat, mat.T)
        assert np.linalg.eigvalsh(mat)[0] >= -1e-12


def test_cscrb_mu_examples(toeplitz8):
    mu_block, _ = cscrb(toeplitz8, moments(StudentT(5.0, 5 / 12), 8), 1)
    np.testing.assert_allclose(mu_block, 8 / (4 * 0.7222222222222222) * toeplitz8.sigma, rtol=1e-12)
    assert mu_block[0, 0] == pytest.approx(2.7692, abs=1e-4)
    mu_g, _ = cscrb(toeplitz8, moments(GeneralizedGaussian(1, 1), 8), 1)
    np.testing.assert_allclose(mu_g, toeplitz8.sigma, rtol=1e-14)


def test_gaussian_small_examples():
    params = RESParams(np.zeros(2), np.eye(2), constrained=True)
    mom = moments(GeneralizedGaussian(1, 1), 2)
    np.testing.assert_allclose(ccrb(params, mom, 1)[0], np.eye(2), atol=1e-15)
    report = bound_report(params, mom, 1)
    assert report.eps_cscrb_mu == pytest.approx(math.sqrt(2), rel=1e-15)
    idx = bound_indices(report)
    assert idx["eps_ccrb_mu"] == pytest.approx(math.sqrt(2))
    assert idx["eps_cscrb_sigma"] == report.eps_cscrb_sigma
    assert matcalc.frobenius_norm(np.zeros((3, 3))) == 0.0


def test_gaussian_limit_of_bounds(toeplitz8):
    t = bound_report(toeplitz8, moments(calibrate_scale("t", 1e4, 4.0, 8), 8), 24)
    g = bound_report(toeplitz8, moments(calibrate_scale("gg", 1.0, 4.0, 8), 8), 24)
    for name in ("ccrb_mu", "ccrb_sigma", "cscrb_mu", "cscrb_sigma"):
        assert _rel(getattr(t, name), getattr(g, name)) <= 0.005
