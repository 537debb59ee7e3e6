import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cde import density as dm
from oracles import brute_density, central_diff, grid_simplex_min, rel_err


def one_dim(c):
    return dm.DensityParams.from_complex([1.0], np.array([[[c]]]))


def random_params(rng, D, K, F, scale=0.4):
    lam = rng.dirichlet(np.ones(F))
    coef = (rng.standard_normal((D, K, F)) + 1j * rng.standard_normal((D, K, F))) * scale / np.sqrt(2)
    return dm.DensityParams.from_complex(lam, coef)


# -- factor response and evaluation -----------------------------------------

def test_factor_response_at_origin():
    V = dm.factor_response(one_dim(0.25), [0.0])
    np.testing.assert_allclose(V, [[1.5]], atol=1e-15)


def test_factor_response_quarter_period():
    V = dm.factor_response(one_dim(0.25), [0.25])
    np.testing.assert_allclose(V, [[1.0]], atol=1e-15)


def test_density_half_period():
    assert dm.density_eval(one_dim(0.25), [0.5]) == pytest.approx(0.5, abs=1e-15)


def test_density_matches_full_tensor_oracle():
    rng = np.random.default_rng(11)
    p = random_params(rng, 2, 2, 2)
    Z = rng.random((10, 2))
    got = dm.density_eval(p, Z)
    want = [brute_density(p.lam, p.coef, z) for z in Z]
    np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)


def test_batch_and_single_agree():
    rng = np.random.default_rng(3)
    p = random_params(rng, 3, 2, 4)
    Z = rng.random((6, 3))
    batch = dm.density_eval(p, Z)
    for m in range(6):
        assert dm.density_eval(p, Z[m]) == pytest.approx(batch[m], rel=1e-14)
    np.testing.assert_allclose(dm.factor_response(p, Z)[2], dm.factor_response(p, Z[2]), rtol=1e-14)


def test_rejects_points_outside_cube():
    p = one_dim(0.1)
    with pytest.raises(ValueError, match="unit hypercube"):
        dm.density_eval(p, [1.2])
    with pytest.raises(ValueError, match="dimension"):
        dm.density_eval(p, [0.1, 0.2])


def test_params_validation():
    with pytest.raises(ValueError):
        dm.DensityParams(np.ones(2) / 2, np.zeros((1, 1, 3)), np.zeros((1, 1, 3)))
    with pytest.raises(ValueError):
        dm.DensityParams(np.ones(1), np.zeros((1, 1, 1)), np.zeros((1, 2, 1)))
    bad = dm.DensityParams(np.array([0.7, 0.7]), np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
    with pytest.raises(ValueError, match="simplex"):
        bad.check()


def test_k0_density_is_uniform():
    p = dm.DensityParams(np.array([0.3, 0.7]), np.zeros((2, 0, 2)), np.zeros((2, 0, 2)))
    np.testing.assert_array_equal(dm.density_eval(p, np.random.default_rng(0).random((5, 2))), np.ones(5))


def test_init_density_bounds():
    p = dm.init_density(3, 4, 5, np.random.default_rng(0), scale=0.5)
    p.check()
    k = np.arange(1, 5)[None, :, None]
    assert np.all(np.abs(p.coef) <= 0.5 / k + 1e-15)
    np.testing.assert_allclose(p.lam, 0.2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_integrates_to_one_along_each_axis(D, K, F, seed):
    # integrating any single coordinate out over a uniform grid is exact for
    # trigonometric polynomials of degree < number of nodes
    rng = np.random.default_rng(seed)
    p = random_params(rng, D, K, F)
    n = 2 * K + 3
    t = np.arange(n) / n
    Z = np.tile(rng.random(D), (n, 1))
    Z[:, 0] = t
    V = dm.factor_response(p, Z)  # (n, D, F)
    marg = (np.prod(V[:, 1:, :], axis=1).mean(axis=0) * V[:, 0, :].mean(axis=0)) @ p.lam
    rest = np.prod(dm.factor_response(p, Z[0])[1:], axis=0) @ p.lam if D > 1 else 1.0
    assert V[:, 0, :].mean(axis=0) == pytest.approx(np.ones(F), abs=1e-12)
    assert marg == pytest.approx(rest, abs=1e-10)


# -- NLL and gradients ------------------------------------------------------

def test_nll_single_row():
    assert dm.nll_batch(one_dim(0.25), np.array([[0.5]])) == pytest.approx(-math.log(0.5), abs=1e-12)


def test_nll_uses_floor():
    p = one_dim(1.0)  # V(0.5) = 1 - 2 = -1
    assert dm.nll_batch(p, np.array([[0.5]]), eps_floor=1e-10) == pytest.approx(-math.log(1e-10))
    g = dm.nll_gradients(p, np.array([[0.5]]))
    assert not np.any(g.grad_re) and not np.any(g.grad_im) and not np.any(g.grad_z) and not np.any(g.grad_lambda)


def test_k0_gradients():
    p = dm.DensityParams(np.array([0.5, 0.5]), np.zeros((2, 0, 2)), np.zeros((2, 0, 2)))
    g = dm.nll_gradients(p, np.random.default_rng(0).random((7, 2)))
    assert g.grad_re.size == 0 and g.grad_im.size == 0
    np.testing.assert_array_equal(g.grad_z, 0.0)
    np.testing.assert_allclose(g.grad_lambda, [-1.0, -1.0])


def _positive_instance(rng, D, K, F, M):
    # small coefficients keep every factor positive, so the floor is inactive
    p = random_params(rng, D, K, F, scale=0.15 / max(K, 1))
    Z = rng.uniform(0.05, 0.95, (M, D))
    assert np.all(dm.density_eval(p, Z) > 0)
    return p, Z


@pytest.mark.parametrize("seed", range(5))
def test_nll_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p, Z = _positive_instance(rng, 2, 2, 3, 5)
    g = dm.nll_gradients(p, Z)
    fd_re = central_diff(lambda a: dm.nll_batch(dm.DensityParams(p.lam, a, p.coef_im), Z), p.coef_re)
    fd_im = central_diff(lambda a: dm.nll_batch(dm.DensityParams(p.lam, p.coef_re, a), Z), p.coef_im)
    fd_lam = central_diff(lambda a: dm.nll_batch(dm.DensityParams(a, p.coef_re, p.coef_im), Z), p.lam)
    fd_z = central_diff(lambda a: dm.nll_batch(p, a), Z)
    assert rel_err(g.grad_re, fd_re) < 1e-4
    assert rel_err(g.grad_im, fd_im) < 1e-4
    assert rel_err(g.grad_lambda, fd_lam) < 1e-4
    assert rel_err(g.grad_z, fd_z) < 1e-4


def test_density_grad_z_matches_finite_differences():
    rng = np.random.default_rng(8)
    p, Z = _positive_instance(rng, 3, 2, 2, 4)
    f, g = dm.density_grad_z(p, Z)
    np.testing.assert_allclose(f, dm.density_eval(p, Z), rtol=1e-14)
    fd = central_diff(lambda a: float(np.sum(dm.density_eval(p, a))), Z)
    assert rel_err(g, fd) < 1e-6


def test_leave_one_out_survives_zero_factor():
    # a factor that is exactly zero must not poison the other partials
    p = one_dim(0.5)  # V(0.5) = 0
    p2 = dm.DensityParams(np.array([1.0]), np.concatenate([p.coef_re, [[[0.1]]]]),
                          np.concatenate([p.coef_im, [[[0.0]]]]))
    f, g = dm.density_grad_z(p2, np.array([[0.5, 0.3]]))
    assert f[0] == pytest.approx(0.0, abs=1e-15)
    assert np.all(np.isfinite(g))


# -- penalty, projection, diagnostics ----------------------------------------

def test_frobenius_penalty_and_gradient():
    rng = np.random.default_rng(2)
    p = random_params(rng, 2, 3, 2)
    full = sum(np.sum(np.abs(np.concatenate([np.conj(p.coef[d, ::-1]), p.coef[d]])) ** 2) for d in range(2))
    assert dm.frobenius_penalty(p) == pytest.approx(full, rel=1e-12)
    fd = central_diff(lambda a: dm.frobenius_penalty(dm.DensityParams(p.lam, a, p.coef_im)), p.coef_re)
    assert rel_err(dm.frobenius_gradient(p)[0], fd) < 1e-7


def test_project_simplex_example():
    np.testing.assert_allclose(dm.project_simplex([1.2, -0.3, 0.1]), [1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(grid_simplex_min([1.2, -0.3, 0.1]), [1.0, 0.0, 0.0], atol=1e-3)


def test_project_simplex_rejects_bad_input():
    with pytest.raises(ValueError):
        dm.project_simplex([])
    with pytest.raises(ValueError):
        dm.project_simplex([np.nan, 1.0])


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_project_simplex_properties(v):
    w = dm.project_simplex(v)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) < 1e-12
    # fixed point on the simplex, and KKT: positive entries share one shift
    np.testing.assert_allclose(dm.project_simplex(w), w, atol=1e-12)
    pos = w > 0
    shift = v[pos] - w[pos]
    assert np.ptp(shift) < 1e-9 * max(1.0, np.abs(v).max())
    assert np.all(v[~pos] - shift.mean() <= 1e-9 * max(1.0, np.abs(v).max()))


def test_decay_diagnostic_and_all_zero():
    rng = np.random.default_rng(5)
    p = random_params(rng, 2, 3, 4)
    want = np.array([[np.mean([abs(p.coef[d, k, f]) for f in range(4)]) for k in range(3)] for d in range(2)])
    np.testing.assert_allclose(dm.decay_diagnostic(p), want, rtol=1e-14)
    zero = dm.DensityParams(np.ones(2) / 2, np.zeros((2, 3, 2)), np.zeros((2, 3, 2)))
    np.testing.assert_array_equal(dm.decay_diagnostic(zero), 0.0)


def test_clip_magnitudes():
    p = dm.DensityParams.from_complex([1.0], np.array([[[3 + 4j, 0.3j]]]).reshape(1, 2, 1))
    q = dm.clip_magnitudes(p)
    np.testing.assert_allclose(q.coef[0, :, 0], [0.6 + 0.8j, 0.3j])
