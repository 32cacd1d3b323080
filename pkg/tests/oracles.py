"""Independent reference computations used by the tests."""
import numpy as np


def _rhs(r, q, p):
    return p, -2.0 * p / r + q - q**3


def rk4_shoot(a, r_end=30.0, h=2e-3):
    """Vectorised fixed-step RK4 shooting; returns verdicts (+1 overshoot, -1 undershoot, 0)
    and the profiles sampled on the step grid."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    r0 = h
    c2 = (a - a**3) / 6.0
    q, p = a + c2 * r0**2, 2 * c2 * r0
    verdict = np.zeros(a.size, dtype=int)
    r = r0
    qs = [q.copy()]
    while r < r_end:
        k1 = _rhs(r, q, p)
        k2 = _rhs(r + h / 2, q + h / 2 * k1[0], p + h / 2 * k1[1])
        k3 = _rhs(r + h / 2, q + h / 2 * k2[0], p + h / 2 * k2[1])
        k4 = _rhs(r + h, q + h * k3[0], p + h * k3[1])
        q = q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r += h
        live = verdict == 0
        verdict[live & (q < 0)] = 1
        verdict[live & (q >= 0) & (p > 0)] = -1
        # freeze classified shots so they do not overflow
        q = np.where(verdict != 0, 0.0, q)
        p = np.where(verdict != 0, 0.0, p)
        qs.append(q.copy())
        if np.all(verdict != 0):
            break
    return verdict, np.array(qs)


def q0_oracle(tol=1e-11):
    """Ground-state amplitude by an RK4 scan of [1, 10] in steps of 1e-3, then batch bisection."""
    grid = np.arange(1.0, 10.0, 1e-3)
    v, _ = rk4_shoot(grid, r_end=12.0, h=5e-3)
    i = int(np.nonzero(v == 1)[0][0])
    lo, hi = grid[i - 1], grid[i]
    while hi - lo > tol * hi:
        pts = np.linspace(lo, hi, 33)
        v, _ = rk4_shoot(pts)
        j = int(np.nonzero(v == 1)[0][0])
        lo, hi = pts[j - 1], pts[j]
    return 0.5 * (lo + hi)


def continuum_profile(q0, r_end=9.0):
    """Dense DOP853 solution of the profile ODE from the series at ``r = 1e-4``;
    returns a callable ``r -> (Q, Q')``."""
    from scipy.integrate import solve_ivp
    r0 = 1e-4
    c2 = (q0 - q0**3) / 6.0
    sol = solve_ivp(lambda r, y: [y[1], -2 * y[1] / r + y[0] - y[0] ** 3], (r0, r_end),
                    [q0 + c2 * r0**2, 2 * c2 * r0], method="DOP853", rtol=1e-13, atol=1e-15,
                    dense_output=True)

    def f(r):
        r = np.asarray(r, dtype=float)
        out = sol.sol(np.maximum(r, r0))
        small = r < r0
        out[0][small] = q0 + c2 * r[small] ** 2
        out[1][small] = 2 * c2 * r[small]
        return out[0], out[1]

    return f


def dense_lplus(Qvals, h):
    """Dense ``-D2 + 1 - 3Q^2`` on interior w samples, built from scratch."""
    N = Qvals.size
    A = np.diag(2.0 / h**2 + 1.0 - 3.0 * Qvals**2)
    A -= (np.eye(N, k=1) + np.eye(N, k=-1)) / h**2
    return A
