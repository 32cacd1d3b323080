"""Linearized operator ``L+ = -Delta + 1 - 3 Q^2``, its negative mode, the
Birman-Schwinger gap check and the ``(lambda, gamma)`` decomposition."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, eigsh

from .ground_state import GroundStateData
from .radial import (FOUR_PI, RadialField, RadialGrid, State, h1_sq, inner,
                     l4_4, second_difference)


class SpectralError(RuntimeError):
    pass


# ------------------------------------------------------------------ operator

@dataclass(frozen=True, eq=False)
class LplusOperator:
    """Symmetric tridiagonal ``-D2/h^2 + V`` acting on interior ``w`` samples."""

    grid: RadialGrid
    diag: np.ndarray = field(repr=False)

    @property
    def off(self) -> float:
        return -1.0 / self.grid.h**2

    @classmethod
    def from_potential(cls, grid: RadialGrid, V: np.ndarray) -> "LplusOperator":
        """``V`` holds the zeroth-order coefficient at interior nodes."""
        return cls(grid, 2.0 / grid.h**2 + np.asarray(V, dtype=float))

    def apply_w(self, w: np.ndarray) -> np.ndarray:
        h = self.grid.h
        return -second_difference(w, h) + (self.diag - 2.0 / h**2) * w

    def apply(self, f: RadialField) -> RadialField:
        return RadialField.from_w(self.grid, self.apply_w(f.w))

    def banded(self, shift: float = 0.0) -> np.ndarray:
        ab = np.empty((3, self.diag.size))
        ab[0, :] = self.off
        ab[2, :] = self.off
        ab[1] = self.diag - shift
        return ab

    def dense(self) -> np.ndarray:
        N = self.diag.size
        return (np.diag(self.diag) + self.off * (np.eye(N, k=1) + np.eye(N, k=-1)))

    def sturm_count(self, x: float) -> int:
        """Number of eigenvalues strictly below ``x`` (LDL^T inertia)."""
        e2 = self.off**2
        tiny = np.finfo(float).tiny
        count = 0
        q = np.inf
        for d in self.diag:
            q = (d - x) - (e2 / q if q != 0.0 else e2 / tiny)
            if q < 0:
                count += 1
        return count


def assemble_Lplus(gs: GroundStateData) -> LplusOperator:
    g = gs.grid
    return LplusOperator.from_potential(g, 1.0 - 3.0 * gs.Q.values[:-1] ** 2)


def free_operator(grid: RadialGrid) -> LplusOperator:
    """``-Delta + 1`` (the operator with ``Q = 0``)."""
    return LplusOperator.from_potential(grid, np.ones(grid.n - 1))


def eig_ground(L: LplusOperator, tol: float = 1e-13, max_iter: int = 50):
    """Lowest eigenpair of ``L``; returns ``(k, rho, n_neg)``.

    The eigenvalue is first isolated by Sturm bisection, then refined by
    shifted inverse iteration until the residual is below ``tol`` times the
    operator norm.  ``rho`` is normalised in L^2(R^3) and positive.
    """
    g = L.grid
    n_neg = L.sturm_count(0.0)
    if n_neg == 0:
        raise SpectralError("no negative eigenvalue (wrong Q?)")
    lo = float(np.min(L.diag)) - 2.0 * abs(L.off)
    hi = 0.0
    while hi - lo > 1e-9 * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if L.sturm_count(mid) >= 1:
            hi = mid
        else:
            lo = mid
    shift = lo - 1e-7 * max(1.0, abs(lo))
    ab = L.banded(shift)
    x = np.ones(g.n - 1)
    lam = lo
    opnorm = float(np.max(np.abs(L.diag))) + 2.0 * abs(L.off)
    for _ in range(max_iter):
        x = solve_banded((1, 1), ab, x)
        x /= np.linalg.norm(x)
        Lx = L.apply_w(x)
        lam = float(x @ Lx)
        res = np.linalg.norm(Lx - lam * x)
        if res <= tol * opnorm:
            break
    else:
        raise SpectralError(f"inverse iteration stagnated (residual {res:.3e})")
    if lam >= 0:
        raise SpectralError("lowest eigenvalue is not negative")
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    x /= np.sqrt(FOUR_PI * g.h * (x @ x))
    return float(np.sqrt(-lam)), RadialField.from_w(g, x), n_neg


# ------------------------------------------------------------------ Birman-Schwinger

def _bs_matvec(qs: np.ndarray, r: np.ndarray, h: float, phi: np.ndarray) -> np.ndarray:
    """``3 h Q_i sum_j min(r_i, r_j) Q_j phi_j`` in O(n)."""
    g = qs * phi
    A = np.cumsum(r * g)
    B = np.cumsum(g[::-1])[::-1]
    return 3.0 * h * qs * (A + r * (B - g))


def bs_matrix(gs: GroundStateData) -> np.ndarray:
    """Dense Birman-Schwinger matrix (coarse grids / tests only)."""
    g = gs.grid
    q, r = gs.Q.values[:-1], g.r_int
    return 3.0 * g.h * np.outer(q, q) * np.minimum.outer(r, r)


def birman_schwinger_spectrum(gs: GroundStateData, m: int = 4, tol: float = 1e-12) -> list:
    """Leading ``m`` eigenvalues (descending) of the radial ``3Q(-Delta)^{-1}Q``."""
    if m < 2:
        raise ValueError("m must be >= 2")
    g = gs.grid
    q, r = gs.Q.values[:-1], g.r_int
    N = q.size
    if not np.any(q):
        return [0.0] * m
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(N), rng.standard_normal(N)
    Kx, Ky = _bs_matvec(q, r, g.h, x), _bs_matvec(q, r, g.h, y)
    asym = abs(x @ Ky - Kx @ y)
    if asym > 1e-10 * np.linalg.norm(x) * np.linalg.norm(Ky):
        raise SpectralError(f"quadrature asymmetry {asym:.3e}")
    op = LinearOperator((N, N), matvec=lambda v: _bs_matvec(q, r, g.h, v), dtype=float)
    vals = eigsh(op, k=m, which="LA", tol=tol, return_eigenvectors=False,
                 v0=np.ones(N), ncv=max(2 * m + 1, 20))
    return sorted((float(v) for v in vals), reverse=True)


def extrapolate_h2(values: Sequence[float], hs: Sequence[float]) -> float:
    """Richardson extrapolation of the last two values assuming O(h^2) error."""
    (v1, v2), (h1, h2) = values[-2:], hs[-2:]
    return (v2 * h1**2 - v1 * h2**2) / (h1**2 - h2**2)


# ------------------------------------------------------------------ spectral data

@dataclass(frozen=True, eq=False)
class SpectralData:
    """Negative eigenpair of ``L+`` plus spectral diagnostics."""

    k: float
    rho: RadialField
    n_neg: int
    bs_top: tuple
    L: LplusOperator = field(repr=False)

    @property
    def gap_ok(self) -> bool:
        return len(self.bs_top) >= 2 and self.bs_top[0] > 1 and self.bs_top[1] < 0.98


def spectral_data(gs: GroundStateData, bs_m: int = 4, tol: float = 1e-13) -> SpectralData:
    L = assemble_Lplus(gs)
    k, rho, n_neg = eig_ground(L, tol)
    bs = tuple(birman_schwinger_spectrum(gs, bs_m)) if bs_m else ()
    return SpectralData(k=k, rho=rho, n_neg=n_neg, bs_top=bs, L=L)


def quadratic_form(spec: SpectralData, gs: GroundStateData, gamma: RadialField,
                   check: bool = True) -> float:
    """``<L+ gamma | gamma>`` for ``gamma`` orthogonal to ``rho``."""
    g = gamma.grid
    w = gamma.w
    val = FOUR_PI * g.h * float(w @ spec.L.apply_w(w))
    if check:
        nrm = np.sqrt(max(h1_sq(gamma), 0.0))
        if abs(inner(gamma, spec.rho)) > 1e-8 * max(nrm, 1e-300) and nrm > 0:
            raise ValueError("gamma is not orthogonal to rho")
        if val < -1e-8 * nrm**2:
            raise SpectralError(f"negative quadratic form {val:.3e}: orthogonality broken")
    return val


def project_plus(f: RadialField, spec: SpectralData) -> RadialField:
    """``P+ f = f - rho <rho|f>``."""
    return f - inner(spec.rho, f) * spec.rho


# ------------------------------------------------------------------ decomposition

@dataclass(frozen=True, eq=False)
class Decomposition:
    """``u = sigma [Q + lam rho + gamma]``, ``udot = sigma [lamdot rho + gammadot]``."""

    sigma: int
    lam: float
    lamdot: float
    gamma: RadialField
    gammadot: RadialField
    t: float = 0.0

    def lam_pm(self, k: float):
        """``(lambda_+, lambda_-) = lambda +- lamdot/k``."""
        return self.lam + self.lamdot / k, self.lam - self.lamdot / k


def split(s: State, sigma: int, spec: SpectralData, gs: GroundStateData) -> Decomposition:
    v = sigma * s.u - gs.Q
    vd = sigma * s.udot
    lam = inner(v, spec.rho)
    lamdot = inner(vd, spec.rho)
    return Decomposition(sigma, lam, lamdot, v - lam * spec.rho, vd - lamdot * spec.rho, s.t)


def perturbation(d: Decomposition, spec: SpectralData) -> RadialField:
    return d.lam * spec.rho + d.gamma


def linearized_norm_sq(d: Decomposition, spec: SpectralData, gs: GroundStateData) -> float:
    """``[k^2 lam^2 + <L+ gamma|gamma> + lamdot^2 + ||gammadot||^2] / 2``."""
    q = quadratic_form(spec, gs, d.gamma, check=False)
    return 0.5 * (spec.k**2 * d.lam**2 + q + d.lamdot**2 + inner(d.gammadot, d.gammadot))


def cubic_remainder(v: RadialField, gs: GroundStateData) -> float:
    """``C(v) = <Q|v^3> + ||v||_4^4 / 4``."""
    g = v.grid
    vv, q = v.values[:-1], gs.Q.values[:-1]
    return FOUR_PI * g.h * float(np.sum(q * vv**3 * g.r_int**2)) + 0.25 * l4_4(v)


def chi(x):
    """C^2 cutoff: 1 on [0, 1], 0 on [2, inf), quintic smoothstep between."""
    s = np.clip(np.abs(np.asarray(x, dtype=float)) - 1.0, 0.0, 1.0)
    out = 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
    return float(out) if np.ndim(out) == 0 else out


def d_sigma(d: Decomposition, spec: SpectralData, gs: GroundStateData, delta_E: float):
    """Nonlinear distance ``d_sigma`` of a decomposition; returns ``(d, C(v), ||v||_E^2)``."""
    N2 = linearized_norm_sq(d, spec, gs)
    C = cubic_remainder(perturbation(d, spec), gs)
    val = N2 - chi(np.sqrt(max(N2, 0.0)) / (2.0 * delta_E)) * C
    return float(np.sqrt(max(val, 0.0))), C, N2


def decompose(s: State, spec: SpectralData, gs: GroundStateData,
              delta_E: Optional[float] = None) -> Decomposition:
    """Decomposition with ``sigma`` minimising ``d_sigma`` (ties go to +1)."""
    return decompose_full(s, spec, gs, delta_E)[0]


def decompose_full(s: State, spec: SpectralData, gs: GroundStateData,
                   delta_E: Optional[float] = None):
    """``(decomposition, d_Q, C(v), ||v||_E^2)`` for the minimising sign."""
    if delta_E is None:
        from .functionals import ThresholdParams
        delta_E = ThresholdParams().delta_E
    best = None
    for sigma in (1, -1):
        d = split(s, sigma, spec, gs)
        dist, C, N2 = d_sigma(d, spec, gs, delta_E)
        if best is None or dist < best[1]:
            best = (d, dist, C, N2)
    return best


def reconstruct(d: Decomposition, spec: SpectralData, gs: GroundStateData) -> State:
    u = d.sigma * (gs.Q + d.lam * spec.rho + d.gamma)
    ud = d.sigma * (d.lamdot * spec.rho + d.gammadot)
    return State(u, ud, d.t)
