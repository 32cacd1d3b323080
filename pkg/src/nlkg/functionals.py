"""Scalar functionals: energy, K-functionals, the nonlinear distance ``d_Q``,
the sign functional, the localized virial and exterior energies."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .ground_state import GroundStateData
from .linearized import (Decomposition, SpectralData, chi, cubic_remainder,
                         decompose_full, linearized_norm_sq, perturbation,
                         project_plus, quadratic_form)
from .radial import (FOUR_PI, RadialField, State, grad_sq, h1_sq, inner, l2_sq,
                     l4_4)

log = logging.getLogger(__name__)

#: Largest dyadic delta with |C(v)| <= ||v||_E^2 / 2 on the calibration sample
#: (see ``calibrate_delta_E``), measured on the default grid and frozen.
CALIBRATED_DELTA_E = 0.5

INSIDE_BALL = 0
#: Relative rounding allowance in the ball test ``d_Q^2 <= 2(E - J(Q))``.
BALL_ROUNDING = 64 * np.finfo(float).eps


# ------------------------------------------------------------------ thresholds

class ThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdParams:
    """Thresholds for distances, detectors and windows.

    Unspecified scales follow ``delta_E``: ``delta_X = delta_E``,
    ``delta_S = delta_X/(2 C_star)``, ``delta_star = delta_S``,
    ``R_star = delta_star/4``, ``eps_star = R_star/4``.
    """

    delta_E: float = CALIBRATED_DELTA_E
    delta_X: Optional[float] = None
    delta_S: Optional[float] = None
    delta_star: Optional[float] = None
    eps_star: Optional[float] = None
    R_star: Optional[float] = None
    C_star: float = 1.0
    eta_scat: float = 0.05
    u_max: float = 1e6
    T_win: float = 4.0
    T_tail: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, float(v))  # noqa: E731
        if self.delta_X is None:
            set_("delta_X", self.delta_E)
        if self.delta_S is None:
            set_("delta_S", self.delta_X / (2.0 * self.C_star))
        if self.delta_star is None:
            set_("delta_star", self.delta_S)
        if self.R_star is None:
            set_("R_star", self.delta_star / 4.0)
        if self.eps_star is None:
            set_("eps_star", self.R_star / 4.0)
        self.validate()

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ThresholdError(f"{f.name} must be positive and finite, got {v}")
        if not np.isclose(2.0 * self.C_star * self.delta_S, self.delta_X, rtol=1e-12):
            raise ThresholdError("relation 2*C_star*delta_S = delta_X violated "
                                 f"({2 * self.C_star * self.delta_S:g} != {self.delta_X:g})")
        if self.delta_X > self.delta_E:
            raise ThresholdError("relation delta_X <= delta_E violated")
        if not self.eps_star < self.R_star / 2.0 < self.delta_S:
            raise ThresholdError("relation eps_star < R_star/2 < delta_S violated")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ static functionals

class KValues(NamedTuple):
    K0: float
    K2: float
    G0: float
    G2: float


def energy(s: State, gs: Optional[GroundStateData] = None) -> float:
    """``E = int (udot^2 + |grad u|^2 + u^2)/2 - u^4/4``."""
    return 0.5 * (l2_sq(s.udot) + h1_sq(s.u)) - 0.25 * l4_4(s.u)


def J_static(u: RadialField) -> float:
    return 0.5 * h1_sq(u) - 0.25 * l4_4(u)


def K_functionals(u: RadialField) -> KValues:
    g2, m2, l4 = grad_sq(u), l2_sq(u), l4_4(u)
    K0 = g2 + m2 - l4
    K2 = g2 - 0.75 * l4
    J = 0.5 * (g2 + m2) - 0.25 * l4
    return KValues(K0, K2, J - K0 / 4.0, J - K2 / 3.0)


def energy_identity_gap(s: State) -> float:
    """``4E - K0 - (||u||_{H^1}^2 + 2||udot||^2)`` (zero up to rounding)."""
    return 4.0 * energy(s) - K_functionals(s.u).K0 - (h1_sq(s.u) + 2.0 * l2_sq(s.udot))


# ------------------------------------------------------------------ distance and sign

def linearized_norm(d: Decomposition, spec: SpectralData, gs: GroundStateData) -> float:
    """``||v||_E``; raises if the quadratic form on ``gamma`` is negative."""
    quadratic_form(spec, gs, d.gamma)
    return float(np.sqrt(linearized_norm_sq(d, spec, gs)))


class DistanceResult(NamedTuple):
    dQ: float
    sigma: int
    C_v: float
    decomposition: Decomposition
    norm_E_sq: float


def distance_dQ(s: State, spec: SpectralData, gs: GroundStateData,
                p: Optional[ThresholdParams] = None) -> DistanceResult:
    p = p or ThresholdParams()
    d, dist, C, N2 = decompose_full(s, spec, gs, p.delta_E)
    return DistanceResult(dist, d.sigma, C, d, N2)


def _sgn(x: float) -> int:
    return 1 if x >= 0 else -1


class SignResult(NamedTuple):
    value: int
    anomaly: bool
    near: int
    far: int


def sign_functional(s: State, ctx, p: Optional[ThresholdParams] = None,
                    dist: Optional[DistanceResult] = None,
                    E: Optional[float] = None, K0: Optional[float] = None) -> SignResult:
    """Sign functional; ``value`` is +1, -1 or ``INSIDE_BALL`` (0).

    ``ctx`` is ``(spec, gs)``.  In the overlap ``delta_S <= d_Q <= delta_E`` both
    branches are evaluated; the eigenmode branch is returned and a disagreement
    is flagged as an anomaly.
    """
    spec, gs = ctx
    p = p or ThresholdParams()
    dist = dist or distance_dQ(s, spec, gs, p)
    E = energy(s) if E is None else E
    K0 = K_functionals(s.u).K0 if K0 is None else K0
    near = -_sgn(dist.decomposition.lam)
    far = _sgn(K0)
    if dist.dQ**2 <= 2.0 * (E - gs.JQ) + BALL_ROUNDING * gs.JQ:
        return SignResult(INSIDE_BALL, False, near, far)
    if dist.dQ <= p.delta_E:
        anomaly = dist.dQ >= p.delta_S and near != far
        if anomaly:
            log.info("sign branches disagree at d_Q=%.4g", dist.dQ)
        return SignResult(near, anomaly, near, far)
    return SignResult(far, False, near, far)


# ------------------------------------------------------------------ virial and exterior energy

@dataclass(frozen=True)
class VirialCutoff:
    """Two-cone cutoff on ``[T1, T2]`` with shift ``S``."""

    T1: float
    T2: float
    S: float

    def weight(self, t: float, r: np.ndarray) -> np.ndarray:
        if t <= 0.5 * (self.T1 + self.T2):
            rad = t - self.T1 + self.S
        else:
            rad = self.T2 - t + self.S
        return chi(r / max(rad, 1e-300))


def _d4(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central derivative on interior nodes; ``f`` is padded by two on each side."""
    return (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * h)


def virial(s: State, cutoff: Optional[VirialCutoff] = None) -> float:
    """``<w udot | (x.grad + 3/2) u>``, so that ``dV/dt = -K2`` for ``w = 1``.

    In ``w = r u`` the multiplier is ``r d_r + 1/2``, discretised as the
    antisymmetric ``(R D + D R)/2`` with a fourth-order ``D`` and odd reflection
    at both ends.  The remaining mismatch with ``K2`` is the ``h^2`` dispersion
    of the three-point Laplacian.
    """
    g = s.grid
    h = g.h
    w = s.u.w
    wp = np.concatenate(([-w[0], 0.0], w, [0.0, -w[-1]]))
    rp = np.concatenate(([-h, 0.0], g.r_int, [g.r_max, g.r_max + h]))
    Bw = 0.5 * (g.r_int * _d4(wp, h) + _d4(rp * wp, h))
    wd = s.udot.w
    if cutoff is not None:
        wd = wd * cutoff.weight(s.t, g.r_int)
    return FOUR_PI * h * float(wd @ Bw)


def exterior_energy(s: State, radius: float):
    """``(free, nonlinear)`` exterior energies over ``r > radius``."""
    g = s.grid
    if radius >= g.r_max:
        raise ValueError("radius must be below r_max")
    w = np.concatenate(([0.0], s.u.w, [0.0]))
    wd = np.concatenate(([0.0], s.udot.w, [0.0]))
    r = np.concatenate(([0.0], g.r))
    j = max(0, int(np.ceil(radius / g.h - 1e-12)))
    wt = np.ones(g.n + 1 - j)
    wt[0] = 0.5
    mass = FOUR_PI * g.h * float(np.sum(wt * (w[j:] ** 2 + wd[j:] ** 2)))
    grad = FOUR_PI / g.h * float(np.sum(np.diff(w[j:]) ** 2))
    if j > 0:
        grad += FOUR_PI * w[j] ** 2 / r[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        u4 = np.where(r[j:] > 0, w[j:] ** 4 / np.where(r[j:] > 0, r[j:], 1.0) ** 2, 0.0)
    quart = FOUR_PI * g.h * float(np.sum(wt * u4))
    free = 0.5 * (mass + grad)
    return free, free - 0.25 * quart


def low_kinetic_check(times: Sequence[float], grad2: Sequence[float], mu: float) -> bool:
    """``int ||grad u||^2 dt <= mu^2`` over the last window of length 2."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(grad2, dtype=float)
    if t.size < 2 or abs(t[-1] - t[0]) < 2.0 - 1e-9:
        raise ValueError("need samples spanning a window of length 2")
    m = np.abs(t - t[-1]) <= 2.0 + 1e-9
    return float(np.trapezoid(y[m], t[m]) if hasattr(np, "trapezoid") else np.trapz(y[m], t[m])) <= mu**2


# ------------------------------------------------------------------ diagnostics

DIAG_COLUMNS = ("t", "E", "J_u", "K0", "K2", "dQ", "sigma_sign", "lam", "lamdot",
                "lam_plus", "lam_minus", "h1_norm", "l4_norm", "Vw", "sigma",
                "amp", "grad2", "udot2", "uudot", "anomaly")
DIAG_VERSION = "nlkg-diag v1"


@dataclass(frozen=True)
class DiagnosticsSample:
    """One diagnostic row.  ``h1_norm`` and ``l4_norm`` are norms (not powers);
    ``sigma_sign`` is +1, -1 or 0 for inside the ball."""

    t: float
    E: float
    J_u: float
    K0: float
    K2: float
    dQ: float
    sigma_sign: int
    lam: float
    lamdot: float
    lam_plus: float
    lam_minus: float
    h1_norm: float
    l4_norm: float
    Vw: float = float("nan")
    sigma: int = 1
    amp: float = 0.0
    grad2: float = 0.0
    udot2: float = 0.0
    uudot: float = 0.0
    anomaly: bool = False

    @property
    def potential_ratio(self) -> float:
        """``||u||_4^4 / (||u||_{H^1}^2 + ||udot||^2)``."""
        den = self.h1_norm**2 + self.udot2
        return self.l4_norm**4 / den if den > 0 else 0.0

    @property
    def energy_norm(self) -> float:
        return float(np.sqrt(self.h1_norm**2 + self.udot2))

    def row(self) -> list:
        out = []
        for c in DIAG_COLUMNS:
            v = getattr(self, c)
            if c == "sigma_sign":
                out.append("inside-ball" if v == INSIDE_BALL else f"{v:+d}")
            elif isinstance(v, (bool, np.bool_)):
                out.append(str(int(v)))
            elif isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            else:
                out.append(f"{float(v):.17g}")
        return out

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "DiagnosticsSample":
        kw = {}
        for c, v in zip(DIAG_COLUMNS, row):
            if c == "sigma_sign":
                kw[c] = INSIDE_BALL if v == "inside-ball" else int(v)
            elif c in ("sigma",):
                kw[c] = int(v)
            elif c == "anomaly":
                kw[c] = bool(int(v))
            else:
                kw[c] = float(v)
        return cls(**kw)


def diagnose(s: State, gs: GroundStateData, spec: SpectralData,
             p: Optional[ThresholdParams] = None,
             cutoff: Optional[VirialCutoff] = None, with_virial: bool = False) -> DiagnosticsSample:
    p = p or ThresholdParams()
    u, ud = s.u, s.udot
    g2, m2, l4, v2 = grad_sq(u), l2_sq(u), l4_4(u), l2_sq(ud)
    E = 0.5 * (v2 + g2 + m2) - 0.25 * l4
    K0 = g2 + m2 - l4
    K2 = g2 - 0.75 * l4
    dist = distance_dQ(s, spec, gs, p)
    sg = sign_functional(s, (spec, gs), p, dist=dist, E=E, K0=K0)
    d = dist.decomposition
    lp, lm = d.lam_pm(spec.k)
    V = virial(s, cutoff) if (with_virial or cutoff is not None) else float("nan")
    return DiagnosticsSample(
        t=s.t, E=E, J_u=0.5 * (g2 + m2) - 0.25 * l4, K0=K0, K2=K2, dQ=dist.dQ,
        sigma_sign=sg.value, lam=d.lam, lamdot=d.lamdot, lam_plus=lp, lam_minus=lm,
        h1_norm=float(np.sqrt(g2 + m2)), l4_norm=float(l4 ** 0.25), Vw=V,
        sigma=d.sigma, amp=u.sup(), grad2=g2, udot2=v2, uudot=inner(u, ud),
        anomaly=sg.anomaly)


# ------------------------------------------------------------------ calibration

def random_bump(grid, rng, n_bumps: int = 3) -> RadialField:
    """Sum of Gaussian shells with random centres, widths and weights."""
    r = grid.r
    f = np.zeros_like(r)
    for _ in range(n_bumps):
        c = rng.uniform(0.0, 8.0)
        wdt = rng.uniform(0.3, 3.0)
        f += rng.standard_normal() * np.exp(-((r - c) / wdt) ** 2)
    f *= np.exp(-np.maximum(r - 20.0, 0.0) ** 2)
    return RadialField(grid, f)


def random_perturbation(gs: GroundStateData, spec: SpectralData, rng,
                        norm_E: float, sigma: int = 1) -> Decomposition:
    """Random ``(lam, lamdot, gamma, gammadot)`` rescaled to ``||v||_E = norm_E``."""
    g = gs.grid
    gam = project_plus(random_bump(g, rng), spec)
    gamd = project_plus(random_bump(g, rng), spec)
    lam, lamd = rng.standard_normal(2)
    mix = rng.uniform(0, 1, size=4) ** 2
    d = Decomposition(sigma, mix[0] * lam, mix[1] * lamd, mix[2] * gam, mix[3] * gamd)
    N = np.sqrt(linearized_norm_sq(d, spec, gs))
    if N == 0:
        return d
    c = norm_E / N
    return Decomposition(sigma, c * d.lam, c * d.lamdot, c * d.gamma, c * d.gammadot)


def calibrate_delta_E(gs: GroundStateData, spec: SpectralData, rng=None,
                      n_samples: int = 10000, start: float = 1.0, floor: float = 2.0**-12):
    """Largest dyadic ``delta <= start`` with ``|C(v)| <= ||v||_E^2/2`` whenever
    ``||v||_E <= 4 delta`` on a random sample.  Returns ``(delta, worst_ratio)``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    shapes = []
    for _ in range(n_samples):
        d = random_perturbation(gs, spec, rng, 1.0)
        shapes.append((perturbation(d, spec), rng.uniform(0.0, 1.0)))
    delta = start
    while delta >= floor:
        worst = 0.0
        for v1, frac in shapes:
            a = 4.0 * delta * (frac if frac > 0.5 else 1.0)
            ratio = abs(cubic_remainder(a * v1, gs)) / a**2
            worst = max(worst, ratio)
        if worst <= 0.5:
            return delta, worst
        delta *= 0.5
    raise ThresholdError("no admissible delta_E found")
