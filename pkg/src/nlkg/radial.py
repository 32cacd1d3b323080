"""Radial grid, discrete operators and exact free Klein-Gordon flow.

Fields live on the uniform grid ``r_i = i*h`` (``i = 1..n``) with the last node
carrying the Dirichlet condition.  Differential and spectral work is done in the
``w = r*u`` representation, where the radial Laplacian becomes a plain second
difference and the free flow diagonalises under the type-I sine transform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import fft as sfft

FOUR_PI = 4.0 * np.pi


class GridMismatchError(ValueError):
    """Raised when two fields on different grids are combined."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid on ``(0, r_max]``.

    Parameters
    ----------
    r_max : float
        Outer radius, where the Dirichlet condition sits.
    n : int
        Number of nodes; node ``n`` is the boundary node.
    """

    r_max: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 64:
            raise ValueError(f"n must be an integer >= 64, got {self.n}")
        if not np.isfinite(self.r_max) or self.r_max <= 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def h(self) -> float:
        return self.r_max / self.n

    @cached_property
    def r(self) -> np.ndarray:
        """Nodes ``r_1 .. r_n``."""
        r = self.h * np.arange(1, self.n + 1, dtype=float)
        r.setflags(write=False)
        return r

    @cached_property
    def r_int(self) -> np.ndarray:
        """Interior nodes ``r_1 .. r_{n-1}`` (the unknowns)."""
        return self.r[:-1]

    @cached_property
    def kappa2(self) -> np.ndarray:
        """Discrete eigenvalues of ``-Delta`` for sine modes ``m = 1..n-1``."""
        m = np.arange(1, self.n, dtype=float)
        k2 = (4.0 / self.h**2) * np.sin(m * np.pi / (2 * self.n)) ** 2
        k2.setflags(write=False)
        return k2

    @cached_property
    def omega(self) -> np.ndarray:
        om = np.sqrt(1.0 + self.kappa2)
        om.setflags(write=False)
        return om

    def zeros(self) -> "RadialField":
        return RadialField(self, np.zeros(self.n))

    def field(self, f: Callable[[np.ndarray], np.ndarray]) -> "RadialField":
        """Sample ``f`` at the nodes (boundary sample forced to zero)."""
        return RadialField(self, np.asarray(f(self.r), dtype=float))

    def guard(self, support: float, horizon: float) -> None:
        """Refuse a run whose light cone could reach the boundary."""
        need = support + abs(horizon) + 2.0
        if need > self.r_max:
            raise BoundaryGuardError(
                f"r_max={self.r_max:g} too small: support {support:.3g} + horizon "
                f"{abs(horizon):.3g} + 2 = {need:.3g}")


class BoundaryGuardError(ValueError):
    """The finite-ball truncation would contaminate the requested run."""


@dataclass(frozen=True, eq=False)
class RadialField:
    """Samples ``u(r_i)``, ``i = 1..n``.  The last sample is the Dirichlet node
    and is stored as zero."""

    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} samples, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite field samples")
        v[-1] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_w(cls, grid: RadialGrid, w_int: np.ndarray) -> "RadialField":
        """Build from interior ``w = r*u`` samples (length ``n-1``)."""
        v = np.zeros(grid.n)
        v[:-1] = np.asarray(w_int) / grid.r_int
        return cls(grid, v)

    @property
    def w(self) -> np.ndarray:
        """Interior ``w = r*u`` samples (length ``n-1``)."""
        return self.values[:-1] * self.grid.r_int

    def _check(self, other: "RadialField"):
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, RadialField):
            self._check(other)
            return RadialField(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, RadialField):
            self._check(other)
            return RadialField(self.grid, self.values - other.values)
        return NotImplemented

    def __neg__(self):
        return RadialField(self.grid, -self.values)

    def __mul__(self, c):
        if np.isscalar(c):
            return RadialField(self.grid, float(c) * self.values)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class State:
    """Energy-space point ``(u, udot)`` at time ``t``."""

    u: RadialField
    udot: RadialField
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.udot.grid:
            raise GridMismatchError("u and udot live on different grids")

    @property
    def grid(self) -> RadialGrid:
        return self.u.grid

    def reversed(self) -> "State":
        """Time-reversed state ``(u, -udot)``."""
        return State(self.u, -self.udot, self.t)


# ---------------------------------------------------------------- quadrature

def _same(f: RadialField, g: RadialField):
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")


def inner(f: RadialField, g: RadialField) -> float:
    """L^2(R^3) inner product, trapezoid rule on ``(r f)(r g)``."""
    _same(f, g)
    return FOUR_PI * f.grid.h * float(np.dot(f.w, g.w))


def l2_sq(f: RadialField) -> float:
    return inner(f, f)


def grad_sq(f: RadialField) -> float:
    """``||grad f||^2`` consistent with the discrete Laplacian (summation by parts)."""
    w = np.concatenate(([0.0], f.w, [0.0]))
    return FOUR_PI / f.grid.h * float(np.sum(np.diff(w) ** 2))


def h1_sq(f: RadialField) -> float:
    return grad_sq(f) + l2_sq(f)


def l4_4(f: RadialField) -> float:
    """``||f||_4^4``."""
    g = f.grid
    return FOUR_PI * g.h * float(np.sum(f.values[:-1] ** 4 * g.r_int**2))


def integrate(density: np.ndarray, grid: RadialGrid) -> float:
    """``4 pi int density r^2 dr`` for a nodal density (trapezoid, zero at 0)."""
    d = np.asarray(density, dtype=float)
    wts = grid.r**2
    return FOUR_PI * grid.h * float(np.dot(d[:-1], wts[:-1]) + 0.5 * d[-1] * wts[-1])


# ---------------------------------------------------------------- operators

def second_difference(w_int: np.ndarray, h: float) -> np.ndarray:
    """``(w_{i-1} - 2 w_i + w_{i+1}) / h^2`` with zero end values."""
    d = -2.0 * w_int
    d[1:] += w_int[:-1]
    d[:-1] += w_int[1:]
    return d / h**2


def laplacian(f: RadialField) -> RadialField:
    g = f.grid
    return RadialField.from_w(g, second_difference(f.w, g.h))


def dst(x: np.ndarray) -> np.ndarray:
    """Orthonormal type-I sine transform (its own inverse)."""
    return sfft.dst(x, type=1, norm="ortho")


def to_modes(f: RadialField) -> np.ndarray:
    return dst(f.w)


def from_modes(grid: RadialGrid, c: np.ndarray) -> RadialField:
    return RadialField.from_w(grid, dst(c))


def sine_mode(grid: RadialGrid, m: int) -> RadialField:
    """Discrete sine mode ``m`` (``w_i = sin(m pi i / n)``), 1-based."""
    i = np.arange(1, grid.n)
    return RadialField.from_w(grid, np.sin(m * np.pi * i / grid.n))


def inverse_laplacian(f: RadialField) -> RadialField:
    """``(-Delta)^{-1} f`` with the Dirichlet condition, by sine-spectral division."""
    g = f.grid
    return from_modes(g, to_modes(f) / g.kappa2)


def rotate_modes(grid: RadialGrid, a: np.ndarray, b: np.ndarray, dt: float):
    """Exact free rotation of mode coefficients of ``(w, wdot)``."""
    om = grid.omega
    c, s = np.cos(om * dt), np.sin(om * dt)
    return c * a + (s / om) * b, -om * s * a + c * b


def free_propagate(s: State, dt: float) -> State:
    """Exact flow of ``u_tt = Delta u - u`` over time ``dt`` (either sign)."""
    g = s.grid
    if dt == 0:
        return State(s.u, s.udot, s.t)
    a, b = rotate_modes(g, to_modes(s.u), to_modes(s.udot), dt)
    return State(from_modes(g, a), from_modes(g, b), s.t + dt)


def free_energy(s: State) -> float:
    """``int (udot^2 + |grad u|^2 + u^2)/2`` in the spectral (exactly conserved) form."""
    g = s.grid
    a, b = to_modes(s.u), to_modes(s.udot)
    return 0.5 * FOUR_PI * g.h * float(np.sum(g.omega**2 * a**2 + b**2))


def energy_norm_sq(s: State) -> float:
    """``||u||_{H^1}^2 + ||udot||^2``."""
    return h1_sq(s.u) + l2_sq(s.udot)


def support_radius(s: State, rel: float = 1e-12) -> float:
    """Radius beyond which the free energy density carries at most ``rel`` of the total."""
    g = s.grid
    w, wd = s.u.w, s.udot.w
    dw = np.diff(np.concatenate((w, [0.0]))) / g.h
    dens = wd**2 + dw**2 + w**2
    total = dens.sum()
    if total == 0:
        return 0.0
    tail = np.cumsum(dens[::-1])[::-1]
    idx = np.nonzero(tail > rel * total)[0]
    return float(g.r_int[idx[-1]]) if idx.size else 0.0
