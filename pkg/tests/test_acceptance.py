"""Acceptance criteria 1-11; each test prints one PASS/FAIL line.

Run standalone with ``python3 tests/test_acceptance.py``.
"""
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from nlkg import lab as L
from nlkg.evolution import FateKind, Stepper
from nlkg.functionals import (K_functionals, VirialCutoff, energy, exterior_energy,
                              virial)
from nlkg.ground_state import load_or_build, scaled_Q_identities
from nlkg.linearized import (assemble_Lplus, birman_schwinger_spectrum, chi,
                             extrapolate_h2, spectral_data)
from nlkg.radial import (RadialField, RadialGrid, State, energy_norm_sq, inner, l2_sq,
                         l4_4, laplacian)

from oracles import continuum_profile, q0_oracle

pytestmark = pytest.mark.slow

#: Frozen constant for the cutoff virial discrepancy, |dV_w/dt + K2| <= C E_ext.
#: Measured worst ratio 0.0145 over cone shifts 0.5, 1, 2 on truncated 0.9Q.
C_VIRIAL = 0.05

S, B = FateKind.SCATTER, FateKind.BLOWUP


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _fmt(x):
    return f"{x:.3g}"


# ------------------------------------------------------------------ shared labs

@pytest.fixture(scope="module")
def default_lab():
    return L.Lab.build(60.0, 6144, 1e-3)


@pytest.fixture(scope="module")
def exp_lab():
    return L.Lab.build(60.0, 2048, 2e-3)


@pytest.fixture(scope="module")
def witnesses(exp_lab):
    fine = exp_lab.refined()
    t0 = time.time()
    out = [L.verify_witness(ws, exp_lab, fine) for ws in L.witness_specs(exp_lab)]
    return out, time.time() - t0


# ------------------------------------------------------------------ 1

def test_criterion_1_ground_state_identities():
    t0 = time.time()
    gs = load_or_build(RadialGrid(30.0, 32768))
    l4 = gs.l4Q
    K = K_functionals(gs.Q)
    worst_J = 0.0
    for a in (0.5, 0.8, 1.2, 2.0):
        J, _, _ = scaled_Q_identities(a, gs)
        worst_J = max(worst_J, abs(J / ((2 * a**2 - a**4) * gs.JQ) - 1))
    lap = laplacian(gs.Q)
    res = -lap + gs.Q - RadialField(gs.grid, gs.Q.values**3)
    rel_res = np.max(np.abs(res.values)) / np.max(np.abs(lap.values))
    dt = time.time() - t0
    ok = (abs(K.K0) <= 1e-6 * l4 and abs(K.K2) <= 1e-6 * l4 and worst_J <= 1e-8
          and rel_res <= 1e-8 and dt <= 60)
    report(1, ok, f"|K0|/l4={_fmt(abs(K.K0) / l4)} |K2|/l4={_fmt(abs(K.K2) / l4)} "
                  f"J(aQ) rel={_fmt(worst_J)} residual={_fmt(rel_res)} ({dt:.1f}s, grid 30/32768)")


# ------------------------------------------------------------------ 2

def _identity_errors(profile, n):
    g = RadialGrid(30.0, n)
    h = g.h
    r = g.r[g.r <= 8.0]
    Q, Qp = profile(r)
    f = r * Qp + Q

    def lplus(v):
        w = r * v
        wl = np.concatenate(([0.0], w))
        lap = (wl[:-2] - 2 * w[:-1] + w[1:]) / h**2
        return -lap / r[:-1] + v[:-1] - 3 * Q[:-1] ** 2 * v[:-1]

    rr = r[:-1]
    nrm = lambda e: np.sqrt(4 * np.pi * h * np.sum(e**2 * rr**2))  # noqa: E731
    return h, nrm(lplus(Q) + 2 * Q[:-1] ** 3), nrm(lplus(f) + 2 * Q[:-1])


@pytest.mark.xfail(strict=True, reason="<L+Q|Q> equals -2||Q||_4^4, not -3 (see decisions ledger)")
def test_criterion_2_linearized_identities():
    profile = continuum_profile(q0_oracle())
    rows = [_identity_errors(profile, n) for n in (1024, 2048, 4096, 8192)]
    hs, e1, e2 = map(np.array, zip(*rows))
    orders = [np.log(e[:-1] / e[1:]) / np.log(hs[:-1] / hs[1:]) for e in (e1, e2)]
    min_order = min(o.min() for o in orders)
    negs = [spectral_data(load_or_build(RadialGrid(30.0, n)), bs_m=0).n_neg
            for n in (1024, 2048, 4096, 8192)]
    gs = load_or_build(RadialGrid(30.0, 8192))
    ratio = inner(assemble_Lplus(gs).apply(gs.Q), gs.Q) / l4_4(gs.Q)
    ok_order = min_order >= 1.8
    ok_neg = negs == [1, 1, 1, 1]
    ok_m3 = abs(ratio + 3) <= 1e-8 * 3
    report(2, ok_order and ok_neg and ok_m3,
           f"min order {min_order:.3f} (>= 1.8: {ok_order}); n_neg {negs}; "
           f"<L+Q|Q>/||Q||_4^4 = {ratio:.10f} vs required -3 ({ok_m3})")


# ------------------------------------------------------------------ 3

def test_criterion_3_spectral_gap():
    t0 = time.time()
    hs, tops = [], []
    for n in (6144, 12288):
        gs = load_or_build(RadialGrid(60.0, n))
        tops.append(birman_schwinger_spectrum(gs, m=3))
        hs.append(gs.grid.h)
    first = extrapolate_h2([t[0] for t in tops], hs)
    second = extrapolate_h2([t[1] for t in tops], hs)
    third = extrapolate_h2([t[2] for t in tops], hs)
    dt = time.time() - t0
    ok = first > 1 and second < 0.98 and third < 1 and dt <= 60
    report(3, ok, f"BS top (h^2-extrapolated) {first:.6f}, {second:.7f}, {third:.4f}; "
                  f"published full-operator value 0.97039244 ({dt:.1f}s)")


# ------------------------------------------------------------------ 4

def test_criterion_4_integrator(default_lab):
    lab = default_lab
    g = lab.grid
    t0 = time.time()
    s0 = lab.scaled(0.8)
    st = Stepper(g, lab.gs).load(s0)
    E0 = energy(s0)
    drift = 0.0
    for i in range(1, 20001):
        st.step(1e-3)
        if i % 500 == 0:
            drift = max(drift, abs(energy(st.state()) - E0) / max(1.0, abs(E0)))
    run_time = time.time() - t0

    r0 = 5.0
    bump = g.field(lambda r: np.where(r < r0, 1.5 * (1 - (r / r0) ** 2) ** 8, 0.0))
    b0 = State(bump, 0.5 * bump)
    Eb = energy(b0)
    st = Stepper(g, None).load(b0)
    ext, bdrift = 0.0, 0.0
    for i in range(1, 20001):
        st.step(1e-3)
        if i % 1000 == 0:
            s = st.state()
            ext = max(ext, exterior_energy(s, r0 + 1e-3 * i + 0.1)[0])
            bdrift = max(bdrift, abs(energy(s) - Eb) / max(1.0, abs(Eb)))

    s1 = State(1.1 * lab.gs.Q, 0.3 * bump)
    st = Stepper(g, lab.gs).load(s1)
    for _ in range(100):
        st.step(1e-3)
    for _ in range(100):
        st.step(-1e-3)
    back = st.state()
    rev = np.sqrt(energy_norm_sq(State(back.u - s1.u, back.udot - s1.udot)) / energy_norm_sq(s1))
    ok = max(drift, bdrift) <= 1e-6 and rev <= 1e-9 and ext <= 1e-8 and run_time <= 60
    report(4, ok, f"energy drift {_fmt(drift)} (0.8Q), {_fmt(bdrift)} (bump); "
                  f"reversibility {_fmt(rev)}; exterior {_fmt(ext)} ({run_time:.1f}s per run)")


# ------------------------------------------------------------------ 5

def test_criterion_5_dichotomy(default_lab):
    t0 = time.time()
    fine = default_lab.refined()
    got = {}
    for name, lab in (("n", default_lab), ("2n", fine)):
        for a in (1.2, 0.8):
            res = L.classify_nine(lab.scaled(a), 40.0, lab)
            got[(name, a)] = (res.backward.kind, res.forward.kind)
    dt = time.time() - t0
    ok = all(got[(nm, 1.2)] == (B, B) and got[(nm, 0.8)] == (S, S) for nm in ("n", "2n"))
    desc = "; ".join(f"{a}Q@{nm}: {b.value}/{f.value}" for (nm, a), (b, f) in got.items())
    report(5, ok and dt <= 120, f"{desc} ({dt:.0f}s, two resolutions)")


# ------------------------------------------------------------------ 6

def test_criterion_6_ejection_rate(default_lab):
    lab = default_lab
    fits = []
    for a in (0.02, -0.02):
        rec = lab.evolve(lab.datum(a, lab.k * a), 12.0, exit_mode=True)
        fits.append(L.ejection_audit(rec, lab.p, lab.spec))
    ok = all(f.rel_error <= 0.1 and f.monotone for f in fits)
    report(6, ok, ", ".join(f"rate {f.rate:.4f} vs k {f.k:.4f} (rel {f.rel_error:.3f})"
                            for f in fits))


# ------------------------------------------------------------------ 7

def test_criterion_7_one_pass_ensemble(exp_lab):
    t0 = time.time()
    rng = np.random.default_rng(20240)
    reps = []
    exited = returns = flips = 0
    fates = {}
    while exited < 100:
        rep = L.one_pass_ensemble(exp_lab, max(100 - exited, 5), rng)
        exited += rep.n_exited
        returns += rep.n_returns
        flips += rep.n_sign_flips
        for k, v in rep.fates.items():
            fates[k] = fates.get(k, 0) + v
        reps.append(rep)
    dt = time.time() - t0
    ok = exited >= 100 and returns == 0 and flips == 0 and dt <= 900
    total = sum(r.n_total for r in reps)
    report(7, ok, f"{exited}/{total} exited the R_* ball; returns {returns}; sign changes {flips}; "
                  f"fates {fates} ({dt:.0f}s)")


# ------------------------------------------------------------------ 8

def test_criterion_8_nine_sets(witnesses):
    items, dt = witnesses
    idx = [(w.coarse.result.set_index, w.fine.result.set_index) for w in items]
    agree = all(w.agree for w in items)
    w4 = items[3].coarse
    set4_ok = (w4.spec.lam == 0 and w4.spec.lamdot > 0
               and (w4.result.backward.kind, w4.result.forward.kind) == (S, B))
    ok = agree and set4_ok and dt <= 600
    report(8, ok, f"sets (coarse, fine) {idx}; (0, k theta eps, 0) -> "
                  f"{w4.result.backward.kind.value}/{w4.result.forward.kind.value} ({dt:.0f}s)")


# ------------------------------------------------------------------ 9

def test_criterion_9_threshold_solutions(exp_lab, witnesses):
    lab = exp_lab
    Wp = L.construct_threshold_W(lab, +1)
    Wm = L.construct_threshold_W(lab, -1)
    sep = witnesses[0][4].coarse.separatrix
    slope, _, r2 = sep.shadowing_fit()
    ok = (Wp.forward.fate.kind is B and Wm.forward.fate.kind is S
          and Wp.rate_error(lab.k) <= 0.25 and Wm.rate_error(lab.k) <= 0.25 and r2 >= 0.95)
    report(9, ok, f"W+ forward {Wp.forward.fate.kind.value}, W- forward {Wm.forward.fate.kind.value}; "
                  f"backward rates {Wp.backward_rate:.4f}, {Wm.backward_rate:.4f} vs k {lab.k:.4f}; "
                  f"shadowing slope {slope:.3f} vs 1/k {1 / lab.k:.3f}, R^2 {r2:.4f}")


# ------------------------------------------------------------------ 10

def _virial_run(grid, s0, dt, T, cutoffs=()):
    st = Stepper(grid, None).load(s0)
    N = int(round(T / dt))
    V, K2 = np.empty(N + 1), np.empty(N + 1)
    Vc = np.empty((len(cutoffs), N + 1))
    ext = np.empty((len(cutoffs), N + 1))
    for i in range(N + 1):
        t = i * dt
        s = st.state()
        s = State(s.u, s.udot, t)
        V[i] = virial(s)
        K2[i] = K_functionals(s.u).K2
        for j, c in enumerate(cutoffs):
            Vc[j, i] = virial(s, c)
            rad = t - c.T1 + c.S if t <= 0.5 * (c.T1 + c.T2) else c.T2 - t + c.S
            ext[j, i] = exterior_energy(s, rad)[0]
        st.step(dt)
    dV = (V[2:] - V[:-2]) / (2 * dt)
    err = np.max(np.abs(dV + K2[1:-1]) / np.maximum(1.0, np.abs(K2[1:-1])))
    ratios = [np.max(np.abs((Vc[j, 2:] - Vc[j, :-2]) / (2 * dt) + K2[1:-1]) / ext[j, 1:-1])
              for j in range(len(cutoffs))]
    return err, ratios


def test_criterion_10_virial():
    g = RadialGrid(60.0, 6144)
    b = g.field(lambda r: np.where(r < 6, (1 - (r / 6) ** 2) ** 8, 0.0))
    err_bump, _ = _virial_run(g, State(1.2 * b, 0.3 * b), 1e-3, 5.0)

    g2 = RadialGrid(25.0, 10240)
    gs = load_or_build(g2)
    u0 = RadialField(g2, 0.9 * gs.Q.values * chi(g2.r / 8.0))
    cuts = [VirialCutoff(0.0, 4.0, s) for s in (0.5, 1.0, 2.0)]
    err_q, ratios = _virial_run(g2, State(u0, g2.zeros()), 5e-4, 2.0, cuts)
    C = max(ratios)
    ok = err_bump <= 1e-3 and err_q <= 1e-3 and C <= C_VIRIAL
    report(10, ok, f"w=1: max |dV/dt+K2|/max(1,|K2|) {_fmt(err_bump)} (bump), "
                   f"{_fmt(err_q)} (truncated 0.9Q); two-cone: discrepancy <= {C:.4f} x "
                   f"exterior free energy (frozen C {C_VIRIAL})")


# ------------------------------------------------------------------ 11

def test_criterion_11_phase_portrait():
    lab = L.Lab.build(30.0, 1024, 2e-3)
    t0 = time.time()
    pr = L.phase_portrait(lab, n_side=41, T=8.0)
    L.refine_boundary(lab, pr, T=8.0)
    slope, icpt = pr.boundary_slope()
    spacing = pr.lamdots[1] - pr.lamdots[0]
    dt = time.time() - t0
    ok = abs(slope + lab.k) <= 0.15 * lab.k and abs(icpt) <= spacing
    report(11, ok, f"boundary slope {slope:.4f} vs -k = {-lab.k:.4f} "
                   f"(rel {abs(slope + lab.k) / lab.k:.3f}); intercept {icpt:.2e} "
                   f"(grid spacing {spacing:.2e}); {len(pr.refined)} crossings ({dt:.0f}s)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
