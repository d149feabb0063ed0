import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jforms import cone, fiber, jfield, oracles
from jforms.errors import SolverError
from jforms.grid import FormField, Grid, MetricField, band_limited, d_matrix, frame_matrix

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def make_cache(n, conjugate=False, amplitude=0.1, seed=3):
    grid = Grid.cube(n)
    if conjugate:
        J = jfield.make_recipe_J(grid, {"type": "conjugated", "amplitude": amplitude,
                                        "modes": 1, "seed": seed})
    else:
        J = jfield.make_constant_J(grid)
    return jfield.compatible_pair(grid, J, MetricField.flat(grid))


@pytest.fixture(scope="module")
def flat3():
    return make_cache(3)


@pytest.fixture(scope="module")
def conj3():
    return make_cache(3, conjugate=True)


@pytest.fixture(scope="module")
def flat7():
    return make_cache(7)


# cone projection --------------------------------------------------------------

def test_project_soc_examples():
    assert np.allclose(cone.project_soc(np.array([2.0, 0.5, 0, 0]), 0.1), [2.0, 0.5, 0, 0])
    assert np.allclose(cone.project_soc(np.array([-1.0, 0, 0, 0])), [0, 0, 0, 0])
    assert np.allclose(cone.project_soc(np.array([0.0, 1, 0, 0])), [0.5, 0.5, 0, 0])


def _one_d(x, eps):
    f, b = oracles.soc_projection_1d(x[0], x[1:], eps)
    return np.r_[f, b]


@settings(max_examples=200, deadline=None)
@given(seeds, st.floats(min_value=0.0, max_value=1.0))
def test_project_soc_properties(seed, eps):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 4)) * rng.uniform(0.1, 5.0)
    px, py = cone.project_soc(x, eps), cone.project_soc(y, eps)
    assert np.allclose(cone.project_soc(px, eps), px, atol=1e-12)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12
    assert cone.soc_margin(px) >= eps - 1e-12
    assert np.allclose(px, _one_d(x, eps), atol=1e-7)


def test_project_soc_is_pointwise():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 3, 3, 3, 3))
    P = cone.project_soc(X, 0.2)
    for idx in [(0, 0, 0, 0), (2, 1, 0, 2)]:
        assert np.allclose(P[(slice(None),) + idx], cone.project_soc(X[(slice(None),) + idx], 0.2))


# affine projection ------------------------------------------------------------

def _dense_D(cache):
    return (d_matrix(cache.grid, 2) @ frame_matrix(cache.invariant_frame)).toarray()


@pytest.mark.parametrize("which", ["flat", "conjugated"])
def test_project_affine_matches_pseudoinverse(flat3, conj3, which):
    cache = flat3 if which == "flat" else conj3
    alpha = cone.random_anti_invariant(cache, 0.5, seed=1)
    problem = cone.ConeProblem(cache, alpha, 1e-3)
    x = np.random.default_rng(2).standard_normal((4,) + cache.grid.shape)
    xp, _ = cone.project_affine(problem, x)
    ref = oracles.dense_affine_projection(_dense_D(cache), problem.rhs.ravel(), x.ravel())
    assert np.abs(xp.ravel() - ref).max() <= 1e-8 * max(1.0, np.abs(x).max())
    res = np.linalg.norm(problem.apply_D(xp[None])[0] - problem.rhs)
    assert res <= 1e-10 * np.linalg.norm(problem.rhs) + 1e-12


def test_project_affine_trivial_cases(flat3):
    zero = FormField.zeros(flat3.grid, 2)
    problem = cone.ConeProblem(flat3, zero, 1e-3)
    x0 = np.zeros((4,) + flat3.grid.shape)
    assert np.array_equal(cone.project_affine(problem, x0)[0], x0)
    x = np.zeros_like(x0)
    x[0] = 1.0
    x[2] = 0.3                     # constants are closed: already feasible
    assert np.array_equal(cone.project_affine(problem, x)[0], x)


# solver -------------------------------------------------------------------------

def test_zero_alpha_flat_is_feasible(flat7):
    res = cone.tame(flat7, FormField.zeros(flat7.grid, 2))
    assert res.feasible
    assert res.closedness <= 1e-6 and res.anti_invariant_error <= 1e-10
    assert res.min_margin >= 0.5 * res.epsilon
    assert np.allclose(res.omega.data, flat7.omega.data, atol=1e-8)


def test_constant_alpha_half(flat3):
    alpha = cone.constant_anti_invariant(flat3, 0, 0.5)
    assert np.isclose(np.abs(alpha.data).max(), 0.5)
    res = cone.tame(flat3, alpha, epsilon=0.1)
    assert res.feasible
    assert np.allclose(res.omega_plus.data, flat3.omega.data, atol=1e-10)
    # alpha(v, Jv) = 0 for anti-invariant alpha: only omega0 enters the taming form
    assert np.isclose(res.min_margin, 1.0, atol=1e-10)


def test_large_constant_alpha_validated_a_posteriori(flat3):
    alpha = cone.constant_anti_invariant(flat3, 1, 2.0)
    a = alpha.fiber[0, 0, 0, 0]
    assert np.linalg.norm(a) > 2
    # symmetric part of (omega0 + alpha)(., J.) computed entry by entry
    W = fiber.vec_to_mat(fiber.OMEGA0 + a)
    S = np.array([[0.5 * (W[i] @ fiber.J0[:, j] + W[j] @ fiber.J0[:, i]) for j in range(4)]
                  for i in range(4)])
    assert np.allclose(S, np.eye(4))
    res = cone.tame(flat3, alpha)
    assert res.feasible
    margins = fiber.positivity_margin(flat3.J.matrix, res.omega.fiber)
    assert margins.min() >= 0.5 * res.epsilon
    _, minus = jfield.proj_field_j(flat3.J, res.omega)
    assert np.abs(minus.data - alpha.data).max() <= 1e-10


def test_random_alpha_conjugated_feasible_and_independently_valid():
    cache = make_cache(5, conjugate=True)
    alpha = cone.random_anti_invariant(cache, 4.0, seed=5)
    res = cone.tame(cache, alpha)
    assert res.feasible
    dw = d_matrix(cache.grid, 2) @ res.omega.data.ravel()
    assert np.linalg.norm(dw) <= 1e-6 * np.linalg.norm(res.omega.data)
    assert fiber.positivity_margin(cache.J.matrix, res.omega.fiber, cache.g_J.full()).min() \
        >= 0.5 * res.epsilon
    # d(omega_plus) = -d(alpha): an element of d Omega_J^- in d of the positive cone
    dplus = d_matrix(cache.grid, 2) @ res.omega_plus.data.ravel()
    dalpha = d_matrix(cache.grid, 2) @ alpha.data.ravel()
    assert np.linalg.norm(dplus + dalpha) <= 1e-6 * max(1.0, np.linalg.norm(dalpha))


def test_budget_exhaustion_is_undetermined():
    cache = make_cache(5, conjugate=True)
    alpha = cone.random_anti_invariant(cache, 8.0, seed=0)
    res = cone.tame(cache, alpha, options=cone.SolverOptions(budget=1))
    assert res.status == cone.UNDETERMINED and not res.feasible
    assert res.omega is None and res.iterations == 1
    assert len(res.history["soc_margin"]) == 1
    full = cone.tame(cache, alpha)
    assert full.feasible and full.iterations > 1


def test_mirror_alpha(flat7):
    # on a J with a compatible form, tame(alpha) feasible implies tame(-alpha) feasible
    for seed in range(3):
        alpha = cone.random_anti_invariant(flat7, 0.2, seed=seed)
        assert cone.tame(flat7, alpha).feasible
        assert cone.tame(flat7, -alpha).feasible


def test_non_finite_input_is_solver_error(flat3):
    alpha = FormField.zeros(flat3.grid, 2)
    alpha.data[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(SolverError):
        cone.ConeProblem(flat3, alpha, 1e-3)


def test_rejections(flat3):
    with pytest.raises(ValueError, match="anti-invariant"):
        cone.tame(flat3, FormField.constant(flat3.grid, 2, fiber.OMEGA0))
    with pytest.raises(ValueError, match="epsilon"):
        cone.ConeProblem(flat3, FormField.zeros(flat3.grid, 2), 0.0)
    with pytest.raises(ValueError, match="not a closed tamed"):
        cone.tamed_to_compatible(flat3, FormField.constant(flat3.grid, 2, -fiber.OMEGA0))
    x1 = flat3.grid.coords()[0]
    bumpy = flat3.omega.data * (1 + 0.1 * np.sin(2 * np.pi * x1))
    with pytest.raises(ValueError, match="not a closed tamed"):
        cone.tamed_to_compatible(flat3, FormField(flat3.grid, 2, bumpy))


# compatible forms -------------------------------------------------------------

def test_compat_flat(flat3):
    res = cone.compat(flat3)
    assert res.feasible
    assert res.extras["normalized_margin"] >= 1 - 1e-6
    _, minus = jfield.proj_field_j(flat3.J, res.omega)
    assert minus.max_abs() <= 1e-10


def test_compat_conjugated():
    cache = make_cache(5, conjugate=True)
    res = cone.compat(cache)
    assert res.feasible and res.closedness <= 1e-6


def test_tamed_to_compatible_chain():
    cache = make_cache(5, conjugate=True)
    alpha = cone.random_anti_invariant(cache, 2.0, seed=1)
    tamed = cone.tame(cache, alpha)
    assert tamed.feasible
    res = cone.tamed_to_compatible(cache, tamed.omega)
    assert res.feasible
    assert res.closedness <= 1e-6 and res.min_margin > 0
    _, minus = jfield.proj_field_j(cache.J, res.omega)
    assert minus.max_abs() <= 1e-10 * max(1.0, res.omega.max_abs())


def test_tamed_to_compatible_of_compatible_input(flat3):
    res = cone.tamed_to_compatible(flat3, flat3.omega)
    assert res.feasible
    assert np.allclose(res.omega.data, 2 * flat3.omega.data, atol=1e-8)


# scale shift --------------------------------------------------------------------

def test_scale_shift_examples(flat3):
    w = flat3.omega
    assert cone.scale_shift(flat3.J.matrix, FormField.zeros(flat3.grid, 2), w) == 0.0
    assert np.isclose(cone.scale_shift(flat3.J.matrix, -0.5 * w, w), 0.5 * 1.005)
    with pytest.raises(ValueError, match="positive"):
        cone.scale_shift(flat3.J.matrix, w, -1.0 * w)


@pytest.mark.parametrize("seed", range(3))
def test_scale_shift_against_bisection(conj3, seed):
    J = conj3.J.matrix
    c = band_limited(conj3.grid, 4, np.random.default_rng(seed), kmax=1) * 3.0
    theta = FormField(conj3.grid, 2, np.einsum("m...,...mi->i...", c, conj3.invariant_frame))
    n = cone.scale_shift(J, theta, conj3.omega)
    ref = oracles.min_scale_scan(J, theta.fiber, conj3.omega.fiber)
    assert ref > 0
    assert ref <= n <= 1.01 * ref
    assert fiber.positivity_margin(J, n * conj3.omega.fiber + theta.fiber).min() > 0
