import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jforms import fiber, oracles
from jforms.suite import random_invariant_fibers

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def basis(label):
    v = np.zeros(6)
    v[fiber.LABELS[2].index(label)] = 1.0
    return v


def random_spd(rng, scale=1.0):
    A = rng.standard_normal((4, 4))
    return A @ A.T + scale * np.eye(4)


def random_j(rng):
    U, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    V, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    P = (U * np.exp(0.5 * rng.standard_normal(4))) @ V
    if np.linalg.det(P) < 0:
        P[:, 0] *= -1
    return P @ fiber.J0 @ np.linalg.inv(P)


def levi_civita_wedge(a, b):
    """Top coefficient of a ^ b by summing over all index permutations."""
    A, B = fiber.vec_to_mat(a), fiber.vec_to_mat(b)
    total = 0.0
    for perm in itertools.permutations(range(4)):
        sign = np.linalg.det(np.eye(4)[list(perm)])
        total += sign * A[perm[0], perm[1]] * B[perm[2], perm[3]]
    return total / 4.0


# wedge ----------------------------------------------------------------------

def test_wedge_examples():
    assert fiber.wedge2(basis("dx12"), basis("dx34")) == 1.0
    assert fiber.wedge2(basis("dx12"), basis("dx12")) == 0.0
    assert fiber.wedge2(fiber.OMEGA0, fiber.OMEGA0) == 2.0


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_wedge_matches_permutation_sum(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 6))
    assert np.isclose(fiber.wedge2(a, b), levi_civita_wedge(a, b), atol=1e-12)
    assert np.isclose(fiber.wedge2(a, b), fiber.wedge2(b, a), atol=1e-12)


def test_compound_matches_explicit_minors():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((4, 4))
    C = fiber.compound(M, 2)
    for p, (i, j) in enumerate(fiber.PAIRS):
        for q, (k, l) in enumerate(fiber.PAIRS):
            assert np.isclose(C[p, q], M[i, k] * M[j, l] - M[i, l] * M[j, k])


# star -----------------------------------------------------------------------

def test_star_euclidean_examples():
    assert np.allclose(fiber.star2(np.eye(4), basis("dx12")), basis("dx34"))
    rng = np.random.default_rng(0)
    a = rng.standard_normal(6)
    assert np.allclose(fiber.star2(np.eye(4), fiber.star2(np.eye(4), a)), a, atol=1e-12)


def test_star_anisotropic_against_orthonormal_frame():
    g = np.diag([4.0, 1.0, 1.0, 1.0])
    a = basis("dx12")
    assert np.allclose(fiber.star2(g, a), oracles.star2_orthonormal(g, a), atol=1e-12)
    # |dx12|^2 = 1/4 and sqrt(det g) = 2, so dx12 ^ *dx12 = dx1234 / 2
    assert np.allclose(fiber.star2(g, a), 0.5 * basis("dx34"), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_star_properties(seed):
    rng = np.random.default_rng(seed)
    g = random_spd(rng)
    a, b = rng.standard_normal((2, 6))
    sb = fiber.star2(g, b)
    vol = np.sqrt(np.linalg.det(g))
    assert np.allclose(fiber.star2(g, fiber.star2(g, a)), a, atol=1e-10)
    assert np.isclose(fiber.wedge2(a, sb), fiber.inner2(g, a, b) * vol, atol=1e-10)
    assert np.allclose(sb, oracles.star2_orthonormal(g, b), atol=1e-10)


def test_star_rejects_bad_metric():
    with pytest.raises(ValueError, match="positive definite"):
        fiber.star2(np.diag([1.0, 1.0, 1.0, -1.0]), basis("dx12"))
    with pytest.raises(ValueError, match="symmetric"):
        fiber.star2(np.eye(4) + np.triu(np.ones((4, 4)), 1), basis("dx12"))


# J action and projections -----------------------------------------------------

def test_j_action_examples():
    assert np.allclose(fiber.j_act2(fiber.J0, fiber.OMEGA0), fiber.OMEGA0)
    a = basis("dx13") - basis("dx24")
    assert np.allclose(fiber.j_act2(fiber.J0, a), -a)


def test_j_action_by_direct_evaluation():
    # a(J., J.) evaluated entry by entry on basis vectors
    rng = np.random.default_rng(1)
    a = rng.standard_normal(6)
    A = fiber.vec_to_mat(a)
    E = np.eye(4)
    direct = np.array([[(fiber.J0 @ E[:, i]) @ A @ (fiber.J0 @ E[:, j]) for j in range(4)]
                       for i in range(4)])
    assert np.allclose(fiber.j_act2(fiber.J0, a), fiber.mat_to_vec(direct))


def test_proj_j_examples():
    plus, minus = fiber.proj_j(fiber.J0, fiber.OMEGA0)
    assert np.allclose(plus, fiber.OMEGA0) and np.allclose(minus, 0)
    plus, minus = fiber.proj_j(fiber.J0, basis("dx13"))
    assert np.allclose(plus, 0.5 * (basis("dx13") + basis("dx24")))
    assert np.allclose(minus, 0.5 * (basis("dx13") - basis("dx24")))


def test_proj_g_examples():
    sd, asd = fiber.proj_g(np.eye(4), basis("dx12"))
    assert np.allclose(sd, 0.5 * (basis("dx12") + basis("dx34")))
    assert np.allclose(asd, 0.5 * (basis("dx12") - basis("dx34")))
    sd, asd = fiber.proj_g(np.eye(4), fiber.OMEGA0)
    assert np.allclose(sd, fiber.OMEGA0) and np.allclose(asd, 0)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_projection_properties(seed):
    rng = np.random.default_rng(seed)
    J = random_j(rng)
    g = random_spd(rng)
    a = rng.standard_normal(6)
    assert np.allclose(fiber.j_act2(J, fiber.j_act2(J, a)), a, atol=1e-9)
    plus, minus = fiber.proj_j(J, a)
    assert np.allclose(plus + minus, a, atol=1e-12)
    assert np.allclose(fiber.j_act2(J, plus), plus, atol=1e-9)
    assert np.allclose(fiber.j_act2(J, minus), -minus, atol=1e-9)
    assert np.allclose(fiber.proj_j(J, plus)[0], plus, atol=1e-9)
    sd, asd = fiber.proj_g(g, a)
    assert np.allclose(sd + asd, a, atol=1e-12)
    assert np.allclose(fiber.star2(g, sd), sd, atol=1e-9)
    assert np.isclose(fiber.wedge2(sd, asd), 0.0, atol=1e-9)
    n2 = fiber.inner2(g, a, a)
    assert np.isclose(n2, fiber.inner2(g, sd, sd) + fiber.inner2(g, asd, asd), rtol=1e-10)


def test_fiber_dimension_counts():
    rng = np.random.default_rng(5)
    J = random_j(rng)
    g = random_spd(rng)
    I6 = np.eye(6)
    plus, minus = fiber.proj_j(J, I6)
    sd, asd = fiber.proj_g(g, I6)
    ranks = [np.linalg.matrix_rank(m, tol=1e-10) for m in (plus, minus, sd, asd)]
    assert ranks == [4, 2, 3, 3]


def _span_equal(A, B, tol=1e-10):
    ra, rb = np.linalg.matrix_rank(A, tol), np.linalg.matrix_rank(B, tol)
    return ra == rb == np.linalg.matrix_rank(np.vstack([A, B]), tol)


def test_invariant_forms_split_as_omega_plus_asd():
    # fiberwise: J-invariant = span(omega) + ASD, self-dual = span(omega) + anti-invariant
    rng = np.random.default_rng(6)
    J = random_j(rng)
    gJ = fiber.compatible_metric(J, random_spd(rng))
    w = fiber.fundamental_form(J, gJ)
    plus, minus = fiber.proj_j(J, np.eye(6))
    sd, asd = fiber.proj_g(gJ, np.eye(6))
    assert _span_equal(plus, np.vstack([w, asd]))
    assert _span_equal(sd, np.vstack([w, minus]))


# positivity and SOC coordinates ------------------------------------------------

def test_positivity_examples():
    assert np.isclose(fiber.positivity_margin(fiber.J0, fiber.OMEGA0), 1.0)
    assert np.isclose(fiber.positivity_margin(fiber.J0, -fiber.OMEGA0), -1.0)
    w = 2.0 * fiber.OMEGA0 + 0.5 * (basis("dx12") - basis("dx34"))
    assert np.isclose(fiber.positivity_margin(fiber.J0, w), 1.5)
    S = fiber.taming_form(fiber.J0, w)
    assert np.allclose(np.sort(np.linalg.eigvalsh(S)), [1.5, 1.5, 2.5, 2.5])


def test_soc_examples():
    c = fiber.soc_coordinates(fiber.J0, np.eye(4), fiber.OMEGA0)
    assert np.isclose(c.f, 1.0) and np.allclose(c.b, 0.0)
    w = fiber.OMEGA0 + 0.5 * (basis("dx12") - basis("dx34"))
    c = fiber.soc_coordinates(fiber.J0, np.eye(4), w)
    assert np.isclose(c.f, 1.0) and np.allclose(c.b, [0.5, 0.0, 0.0])


def test_soc_rejects_non_invariant():
    with pytest.raises(ValueError, match="residual"):
        fiber.soc_coordinates(fiber.J0, np.eye(4), basis("dx13"))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_soc_reconstruction_and_margin(seed):
    J, gJ, w = random_invariant_fibers(20, seed)
    c = fiber.soc_coordinates(J, gJ, w)
    assert np.allclose(fiber.from_soc(J, gJ, c.f, c.b), w, atol=1e-12 * max(1, np.abs(w).max()))
    eig = fiber.positivity_margin(J, w, gJ)
    assert np.allclose(c.margin, eig, atol=1e-10)
    assert np.all(np.sign(c.margin) == np.sign(eig))


def test_adapted_frame_is_orthonormal_and_oriented():
    rng = np.random.default_rng(8)
    J = random_j(rng)
    gJ = fiber.compatible_metric(J, random_spd(rng))
    E = fiber.adapted_frame(J, gJ)
    assert np.allclose(E.T @ gJ @ E, np.eye(4), atol=1e-10)
    assert np.linalg.det(E) > 0
    assert np.allclose(E[:, 1], J @ E[:, 0]) and np.allclose(E[:, 3], J @ E[:, 2])


def test_adapted_frame_rejects_opposite_orientation():
    Jbar = fiber.J0.copy()
    Jbar[2:, 2:] *= -1        # e3 -> -e4: induces the opposite orientation
    with pytest.raises(ValueError, match="orientation"):
        fiber.adapted_frame(Jbar, np.eye(4))


def test_check_j_rejects():
    with pytest.raises(ValueError, match="J\\^2"):
        fiber.check_j(np.eye(4))


def test_debug_dump_keys():
    dump = fiber.debug_dump(fiber.J0, np.eye(4), fiber.OMEGA0)
    assert set(dump) == {"basis", "inputs", "outputs"}
