"""Ground state ``Q`` of ``-Delta Q + Q = Q^3`` by shooting plus discrete Newton polish."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from .radial import RadialField, RadialGrid, grad_sq, h1_sq, l4_4, second_difference

log = logging.getLogger(__name__)

CACHE_HEADER = "NLKG-Q v1"


class ShootingError(RuntimeError):
    pass


class NewtonDivergence(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GroundStateData:
    """Discrete ground state and its integrals."""

    Q: RadialField
    q0: float
    JQ: float
    l4Q: float
    h1Q: float
    residual: float

    @property
    def grid(self) -> RadialGrid:
        return self.Q.grid

    @property
    def grad2Q(self) -> float:
        return grad_sq(self.Q)


# ------------------------------------------------------------------ shooting

def _rhs(r, y):
    q, p = y
    return [p, -2.0 * p / r + q - q**3]


def _series(a: float, r0: float):
    c2 = (a - a**3) / 6.0
    c4 = c2 * (1.0 - 3.0 * a**2) / 20.0
    return [a + c2 * r0**2 + c4 * r0**4, 2 * c2 * r0 + 4 * c4 * r0**3]


def _cross(r, y):
    return y[0]


_cross.terminal = True
_cross.direction = -1


def _turn(r, y):
    return y[1]


_turn.terminal = True
_turn.direction = 1


def shoot_once(a: float, r_end: float = 40.0, rtol: float = 1e-12, dense: bool = False):
    """Integrate from the origin with ``Q(0) = a``.

    Returns ``(verdict, sol)`` with verdict ``+1`` (overshoot: ``Q`` hits zero),
    ``-1`` (undershoot: ``Q'`` turns positive) or ``0`` (neither before ``r_end``).
    """
    r0 = 1e-3
    sol = solve_ivp(_rhs, (r0, r_end), _series(a, r0), method="DOP853", rtol=rtol,
                    atol=1e-14, events=(_cross, _turn), dense_output=dense)
    if sol.t_events[0].size:
        return 1, sol
    if sol.t_events[1].size:
        return -1, sol
    return 0, sol


def shoot_amplitude(tol: float = 1e-14, a_min: float = 1.0, a_max: float = 10.0,
                    scan_step: float = 0.25):
    """Bisect the shooting amplitude; returns ``(a_lo, a_hi)`` with ``a_lo`` an undershoot."""
    grid = np.arange(a_min + scan_step, a_max + 1e-12, scan_step)
    lo = hi = None
    prev = a_min
    for a in grid:
        v, _ = shoot_once(a)
        if v == 1:
            lo, hi = prev, a
            break
        prev = a
    if hi is None:
        raise ShootingError("no overshoot found: bisection bracket not found")
    if shoot_once(lo)[0] != -1:
        raise ShootingError("lower bracket end is not an undershoot")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        v, _ = shoot_once(mid)
        if v == 1:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _initial_profile(grid: RadialGrid, a_lo: float, a_hi: float) -> np.ndarray:
    """Shot profile on the grid, continued by a matched ``c e^{-r}/r`` tail."""
    _, s_lo = shoot_once(a_lo, dense=True)
    _, s_hi = shoot_once(a_hi, dense=True)
    r_end = min(s_lo.t[-1], s_hi.t[-1], grid.r_max)
    rr = grid.r[grid.r <= r_end]
    q_lo, q_hi = s_lo.sol(rr)[0], s_hi.sol(rr)[0]
    bad = np.nonzero(np.abs(q_lo - q_hi) > 1e-3 * np.abs(q_lo))[0]
    i_c = (bad[0] if bad.size else rr.size) - 1
    i_c = max(1, min(i_c, rr.size - 1))
    q = np.empty(grid.n)
    q[: i_c + 1] = 0.5 * (q_lo + q_hi)[: i_c + 1]
    rc = grid.r[i_c]
    tail = grid.r[i_c + 1:]
    q[i_c + 1:] = q[i_c] * rc * np.exp(-(tail - rc)) / tail
    return q


# ------------------------------------------------------------------ polish

def _residual_w(w: np.ndarray, grid: RadialGrid) -> np.ndarray:
    r = grid.r_int
    return -second_difference(w, grid.h) + w - w**3 / r**2


def residual_floor(grid: RadialGrid, scale: float) -> float:
    """Rounding floor of the discrete residual (second differences amplify by ``4/h^2``)."""
    return 64.0 * np.finfo(float).eps * scale * 4.0 / grid.h**2


def newton_polish(grid: RadialGrid, q: np.ndarray, tol: float, max_iter: int = 30) -> np.ndarray:
    """Damped Newton on the discrete equation in the w representation.

    Stagnation below the rounding floor is accepted: on fine grids ``tol`` may
    lie under what double precision can resolve.
    """
    h, r = grid.h, grid.r_int
    w = q[:-1] * r
    scale = max(1.0, float(np.max(np.abs(q))))
    floor = residual_floor(grid, scale)
    F = _residual_w(w, grid)
    res = np.max(np.abs(F / r))
    for it in range(max_iter):
        if res <= tol * scale:
            return w
        ab = np.zeros((3, w.size))
        ab[0, 1:] = -1.0 / h**2
        ab[2, :-1] = -1.0 / h**2
        ab[1] = 2.0 / h**2 + 1.0 - 3.0 * (w / r) ** 2
        dw = solve_banded((1, 1), ab, -F)
        step = 1.0
        while step > 1e-4:
            wn = w + step * dw
            Fn = _residual_w(wn, grid)
            rn = np.max(np.abs(Fn / r))
            if rn < res or rn <= tol * scale:
                break
            step *= 0.5
        else:
            if res <= floor:
                log.info("newton stagnated at the rounding floor, residual %.3e", res)
                return w
            raise NewtonDivergence(f"no decrease at iteration {it}, residual {res:.3e}")
        w, F, res = wn, Fn, rn
        log.debug("newton it=%d residual=%.3e", it, res)
    if res <= max(tol * scale, floor):
        return w
    raise NewtonDivergence(f"residual {res:.3e} after {max_iter} iterations")


def shoot_Q(grid: RadialGrid, tol: float = 1e-11) -> GroundStateData:
    """Ground state on ``grid`` with relative residual ``<= tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if grid.h > 0.05:
        raise ValueError(f"grid too coarse (h={grid.h:.3g} > 0.05)")
    if grid.r_max < 15:
        raise ShootingError("r_max too small to contain the ground state")
    a_lo, a_hi = shoot_amplitude()
    q = _initial_profile(grid, a_lo, a_hi)
    w = newton_polish(grid, q, tol)
    return _assemble(RadialField.from_w(grid, w), 0.5 * (a_lo + a_hi))


def _assemble(Q: RadialField, q0: float) -> GroundStateData:
    g = Q.grid
    F = _residual_w(Q.w, g)
    res = float(np.max(np.abs(F / g.r_int)))
    l4 = l4_4(Q)
    h1 = h1_sq(Q)
    J = 0.5 * h1 - 0.25 * l4
    return GroundStateData(Q=Q, q0=q0, JQ=J, l4Q=l4, h1Q=h1, residual=res)


def scaled_Q_identities(a: float, gs: GroundStateData):
    """``(J, K0, K2)`` of ``a*Q`` evaluated by the functionals module."""
    from .functionals import J_static, K_functionals

    u = a * gs.Q
    kv = K_functionals(u)
    return J_static(u), kv.K0, kv.K2


# ------------------------------------------------------------------ cache

def cache_dir(path: Optional[os.PathLike] = None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get("NLKG_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "nlkg"


def cache_file(grid: RadialGrid, path: Optional[os.PathLike] = None) -> Path:
    return cache_dir(path) / f"Q_rmax{grid.r_max!r}_n{grid.n}.txt"


def fmt(x: float) -> str:
    """17 significant digits (round-trips a double)."""
    return f"{x:.17g}"


def write_cache(gs: GroundStateData, file: Path, spectral=None) -> None:
    g = gs.grid
    lines = [f"{CACHE_HEADER} {fmt(g.r_max)} {g.n}", f"0 {fmt(gs.q0)}"]
    lines += [f"{fmt(r)} {fmt(v)}" for r, v in zip(g.r, gs.Q.values)]
    if spectral is not None:
        lines.append(f"NLKG-SPEC v1 {fmt(spectral.k)}")
        lines += [f"{fmt(r)} {fmt(v)}" for r, v in zip(g.r, spectral.rho.values)]
    file.parent.mkdir(parents=True, exist_ok=True)
    tmp = file.with_suffix(".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(file)


def read_cache(file: Path):
    """Return ``(GroundStateData, k or None, rho values or None)``."""
    text = Path(file).read_text().splitlines()
    head = text[0].split()
    if " ".join(head[:2]) != CACHE_HEADER or len(head) != 4:
        raise ValueError(f"{file}: not a ground-state cache")
    grid = RadialGrid(float(head[2]), int(head[3]))
    q0 = float(text[1].split()[1])
    vals = np.array([float(line.split()[1]) for line in text[2: 2 + grid.n]])
    gs = _assemble(RadialField(grid, vals), q0)
    k = rho = None
    rest = text[2 + grid.n:]
    if rest and rest[0].startswith("NLKG-SPEC v1"):
        k = float(rest[0].split()[2])
        rho = np.array([float(line.split()[1]) for line in rest[1: 1 + grid.n]])
    return gs, k, rho


def load_or_build(grid: RadialGrid, path: Optional[os.PathLike] = None,
                  tol: float = 1e-11, refresh: bool = False) -> GroundStateData:
    """Ground state from the cache, building (and caching) it if absent."""
    f = cache_file(grid, path)
    if f.exists() and not refresh:
        try:
            gs, _, _ = read_cache(f)
            scale = max(1.0, gs.Q.sup())
            if gs.residual <= max(tol * scale, residual_floor(grid, scale)):
                return gs
        except (ValueError, IndexError) as e:
            log.warning("ignoring unreadable cache %s: %s", f, e)
    gs = shoot_Q(grid, tol)
    try:
        write_cache(gs, f)
    except OSError as e:
        log.warning("could not write cache %s: %s", f, e)
    return gs
