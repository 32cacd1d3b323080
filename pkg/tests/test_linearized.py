import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlkg.ground_state import load_or_build
from nlkg.linearized import (Decomposition, assemble_Lplus, birman_schwinger_spectrum,
                             bs_matrix, chi, decompose, eig_ground, extrapolate_h2,
                             free_operator, project_plus, quadratic_form, reconstruct,
                             spectral_data, split)
from nlkg.radial import RadialField, RadialGrid, State, inner, l4_4

from oracles import continuum_profile, dense_lplus, q0_oracle


def test_k_matches_dense_eigensolver(small_gs, small_spec):
    g = small_gs.grid
    A = dense_lplus(small_gs.Q.values[:-1], g.h)
    ev, vec = np.linalg.eigh(A)
    assert np.sum(ev < 0) == 1 == small_spec.n_neg
    assert small_spec.k == pytest.approx(np.sqrt(-ev[0]), rel=1e-12)
    v = vec[:, 0] * np.sign(vec[np.argmax(np.abs(vec[:, 0])), 0])
    v /= np.sqrt(4 * np.pi * g.h * v @ v)
    np.testing.assert_allclose(small_spec.rho.w, v, atol=1e-9)


def test_sturm_count_matches_dense_spectrum(small_gs):
    L = assemble_Lplus(small_gs)
    ev = np.linalg.eigvalsh(L.dense())
    for x in (-20.0, -10.0, 0.0, 0.5, 1.0, 1.5, 40.0):
        assert L.sturm_count(x) == int(np.sum(ev < x))


def test_free_operator_has_no_negative_eigenvalue(small_grid):
    L = free_operator(small_grid)
    assert L.sturm_count(0.0) == 0
    assert L.sturm_count(1.0) == 0


def test_rho_is_positive_and_normalised(small_spec):
    rho = small_spec.rho
    assert np.all(rho.values[:-1] > 0)
    assert inner(rho, rho) == pytest.approx(1.0, rel=1e-12)


def test_eigen_residual(small_gs, small_spec):
    L = assemble_Lplus(small_gs)
    r = L.apply(small_spec.rho) + small_spec.k**2 * small_spec.rho
    assert np.sqrt(inner(r, r)) < 1e-8


def test_k_converges_at_second_order():
    ks = [spectral_data(load_or_build(RadialGrid(30.0, n)), bs_m=0).k for n in (1024, 2048, 4096)]
    ratio = (ks[0] - ks[1]) / (ks[1] - ks[2])
    assert ratio == pytest.approx(4.0, rel=0.1)


def test_lplus_Q_identity_on_discrete_Q(small_gs):
    L = assemble_Lplus(small_gs)
    Q = small_gs.Q
    r = L.apply(Q) + 2 * RadialField(Q.grid, Q.values**3)
    assert np.max(np.abs(r.values)) < 1e-9
    # L+ Q = -2 Q^3 gives <L+ Q|Q> = -2 ||Q||_4^4
    assert inner(L.apply(Q), Q) == pytest.approx(-2 * l4_4(Q), rel=1e-8)


@pytest.fixture(scope="module")
def profile():
    return continuum_profile(q0_oracle())


def _identity_errors(profile, n):
    g = RadialGrid(30.0, n)
    h = g.h
    m = g.r <= 8.0
    r = g.r[m]
    Q, Qp = profile(r)
    f = r * Qp + Q

    def lplus(v):
        w = r * v
        wl = np.concatenate(([0.0], w))
        lap = np.empty_like(w)
        lap[:-1] = (wl[:-2] - 2 * w[:-1] + w[1:]) / h**2
        lap[-1] = np.nan
        return (-lap / r + v - 3 * Q**2 * v)[:-1]

    rr = r[:-1]
    e1 = lplus(Q) + 2 * Q[:-1] ** 3
    e2 = lplus(f) + 2 * Q[:-1]
    nrm = lambda e: np.sqrt(4 * np.pi * h * np.sum(e**2 * rr**2))  # noqa: E731
    return h, nrm(e1), nrm(e2)


def test_lplus_identities_second_order(profile):
    rows = [_identity_errors(profile, n) for n in (1024, 2048, 4096)]
    hs, e1, e2 = map(np.array, zip(*rows))
    for e in (e1, e2):
        order = np.log(e[:-1] / e[1:]) / np.log(hs[:-1] / hs[1:])
        assert np.all(order >= 1.8), order


def test_bs_matvec_matches_dense(small_gs, rng):
    from nlkg.linearized import _bs_matvec
    g = small_gs.grid
    M = bs_matrix(small_gs)
    x = rng.standard_normal(g.n - 1)
    y = _bs_matvec(small_gs.Q.values[:-1], g.r_int, g.h, x)
    np.testing.assert_allclose(y, M @ x, rtol=1e-11, atol=1e-11)


def test_bs_spectrum_matches_dense_and_has_gap(small_gs):
    top = birman_schwinger_spectrum(small_gs, m=3)
    ev = np.sort(np.linalg.eigvalsh(bs_matrix(small_gs)))[::-1]
    np.testing.assert_allclose(top, ev[:3], rtol=1e-9)
    assert top[0] > 1 > 0.98 > top[1]


def test_bs_count_matches_negative_eigenvalues(small_gs, small_spec):
    # eigenvalues >= 1 of the BS operator count the eigenvalues of L+ below 0
    top = birman_schwinger_spectrum(small_gs, m=4)
    assert sum(v >= 1 for v in top) == small_spec.n_neg


def test_extrapolate_h2_exact_on_quadratic():
    hs = np.array([0.1, 0.05])
    vals = 2.0 + 3.0 * hs**2
    assert extrapolate_h2(vals, hs) == pytest.approx(2.0, rel=1e-12)


def test_quadratic_form_positive_on_orthogonal_complement(small_gs, small_spec, rng):
    from nlkg.functionals import random_bump
    for _ in range(5):
        gam = project_plus(random_bump(small_gs.grid, rng), small_spec)
        assert quadratic_form(small_spec, small_gs, gam) > 0


def test_quadratic_form_rejects_non_orthogonal(small_gs, small_spec):
    with pytest.raises(ValueError):
        quadratic_form(small_spec, small_gs, small_spec.rho)


def test_chi_profile():
    assert chi(0.5) == 1.0 and chi(1.0) == 1.0
    assert chi(2.0) == 0.0 and chi(3.0) == 0.0
    x = np.linspace(1, 2, 101)
    assert np.all(np.diff(chi(x)) <= 0)


def test_decomposition_round_trip(small_gs, small_spec, rng):
    from nlkg.functionals import random_bump
    g = small_gs.grid
    s = State(-small_gs.Q + 0.01 * random_bump(g, rng), 0.02 * random_bump(g, rng), 0.3)
    d = decompose(s, small_spec, small_gs)
    assert d.sigma == -1
    back = reconstruct(d, small_spec, small_gs)
    np.testing.assert_allclose(back.u.values, s.u.values, atol=1e-13)
    np.testing.assert_allclose(back.udot.values, s.udot.values, atol=1e-13)
    assert abs(inner(d.gamma, small_spec.rho)) < 1e-13


def test_lam_pm_definition():
    d = Decomposition(1, 0.3, 0.8, None, None)
    lp, lm = d.lam_pm(2.0)
    assert lp == pytest.approx(0.7) and lm == pytest.approx(-0.1)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-0.3, 0.3))
def test_split_recovers_mode_coefficients(small_gs, small_spec, lam, lamdot):
    s = State(small_gs.Q + lam * small_spec.rho, lamdot * small_spec.rho)
    d = split(s, 1, small_spec, small_gs)
    assert d.lam == pytest.approx(lam, abs=1e-13)
    assert d.lamdot == pytest.approx(lamdot, abs=1e-13)
