"""Experiments near the ground state: nine-set classification, separatrix
bisection, threshold solutions, phase portraits and one-pass / ejection audits."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .evolution import (Fate, FateKind, StepControl, TrajectoryRecord, _reverse_sample,
                        evolve)
from .functionals import (INSIDE_BALL, ThresholdParams, distance_dQ, energy,
                          random_bump)
from .ground_state import GroundStateData, load_or_build
from .linearized import SpectralData, project_plus, quadratic_form, spectral_data
from .radial import RadialField, RadialGrid, State, l2_sq

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ context

@dataclass
class Lab:
    """Grid, ground state, spectral data, thresholds and step control bundled."""

    gs: GroundStateData
    spec: SpectralData
    p: ThresholdParams = field(default_factory=ThresholdParams)
    ctl: StepControl = field(default_factory=StepControl)
    sample_every: float = 0.05

    @classmethod
    def build(cls, r_max: float = 60.0, n: int = 6144, dt_max: float = 1e-3,
              p: Optional[ThresholdParams] = None, cache=None, bs_m: int = 0, **ctl_kw) -> "Lab":
        gs = load_or_build(RadialGrid(r_max, n), cache)
        return cls(gs, spectral_data(gs, bs_m=bs_m), p or ThresholdParams(),
                   StepControl(dt_max=dt_max, **ctl_kw))

    def refined(self, cache=None) -> "Lab":
        """Same experiment at ``(2n, dt/2)``."""
        g = self.grid
        kw = dict(dt_min=self.ctl.dt_min, amp_ref=self.ctl.amp_ref,
                  amp_switch=self.ctl.amp_switch, center_frac=self.ctl.center_frac)
        return Lab.build(g.r_max, 2 * g.n, self.ctl.dt_max / 2, self.p, cache, **kw)

    @property
    def grid(self) -> RadialGrid:
        return self.gs.grid

    @property
    def k(self) -> float:
        return self.spec.k

    def datum(self, lam: float = 0.0, lamdot: float = 0.0, gamma: Optional[RadialField] = None,
              gammadot: Optional[RadialField] = None, sigma: int = 1) -> State:
        """``u = sigma (Q + lam rho + gamma)``, ``udot = sigma (lamdot rho + gammadot)``."""
        g = self.grid
        gamma = gamma if gamma is not None else g.zeros()
        gammadot = gammadot if gammadot is not None else g.zeros()
        rho = self.spec.rho
        return State(sigma * (self.gs.Q + lam * rho + gamma), sigma * (lamdot * rho + gammadot))

    def scaled(self, a: float) -> State:
        return State(a * self.gs.Q, self.grid.zeros())

    def evolve(self, s0: State, horizon: float, direction: str = "forward", **kw) -> TrajectoryRecord:
        kw.setdefault("sample_every", self.sample_every)
        kw.setdefault("ctl", self.ctl)
        return evolve(s0, horizon, self.p, self.gs, self.spec, direction=direction, **kw)

    @property
    def eps(self) -> float:
        """Default energy-excess scale ``eps_star/2``."""
        return self.p.eps_star / 2.0


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------ nine sets

_LETTER = {FateKind.SCATTER: "S", FateKind.BLOWUP: "B",
           FateKind.TRAPPED_PLUS: "T", FateKind.TRAPPED_MINUS: "T"}

SET_INDEX = {("S", "S"): 1, ("B", "B"): 2, ("B", "S"): 3, ("S", "B"): 4, ("S", "T"): 5,
             ("T", "S"): 6, ("B", "T"): 7, ("T", "B"): 8, ("T", "T"): 9}
SET_DESCRIPTION = {
    1: "scatter as t -> +inf and t -> -inf",
    2: "blow-up in t > 0 and in t < 0",
    3: "scatter as t -> +inf, blow-up in t < 0",
    4: "blow-up in t > 0, scatter as t -> -inf",
    5: "trapped by +-Q as t -> +inf, scatter as t -> -inf",
    6: "scatter as t -> +inf, trapped by +-Q as t -> -inf",
    7: "trapped by +-Q as t -> +inf, blow-up in t < 0",
    8: "blow-up in t > 0, trapped by +-Q as t -> -inf",
    9: "trapped by +-Q in both time directions",
}


def set_index(backward: FateKind, forward: FateKind) -> Optional[int]:
    key = (_LETTER.get(backward), _LETTER.get(forward))
    return SET_INDEX.get(key)


@dataclass
class NineSetResult:
    backward: Fate
    forward: Fate
    set_index: Optional[int]
    descriptor: dict = field(default_factory=dict)
    records: Tuple[Optional[TrajectoryRecord], Optional[TrajectoryRecord]] = (None, None)

    def to_dict(self) -> dict:
        return {"backward": self.backward.to_dict(), "forward": self.forward.to_dict(),
                "set_index": self.set_index, "descriptor": self.descriptor}


_TIME_KEYS = ("T_star", "t_last", "onset", "t_exit")


def mirrored(rec: TrajectoryRecord, t0: float = 0.0) -> TrajectoryRecord:
    """Backward record of data with ``udot = 0``: ``u(t0 - t) = u(t0 + t)``."""
    from dataclasses import replace
    samples = [replace(_reverse_sample(s), t=2 * t0 - s.t) for s in rec.samples]
    events = [(2 * t0 - t, k) for t, k in rec.events]
    meta = dict(rec.meta, mirrored=True)
    wit = {k: (2 * t0 - v if k in _TIME_KEYS else v) for k, v in rec.fate.witness.items()}
    return TrajectoryRecord(samples, events, Fate(rec.fate.kind, wit), "backward", meta)


def classify_nine(s0: State, T: float, lab: Lab, descriptor: Optional[dict] = None,
                  T_backward: Optional[float] = None, exit_mode: bool = False) -> NineSetResult:
    """Evolve forward and backward and map the fate pair to the set index."""
    E = energy(s0)
    if E >= lab.gs.JQ + lab.p.eps_star**2:
        warnings.warn(f"energy {E:.6g} is not below J(Q) + eps_star^2", stacklevel=2)
    T_b = T if T_backward is None else T_backward
    fwd = lab.evolve(s0, T, "forward", exit_mode=exit_mode)
    if T_b == T and not np.any(s0.udot.values):
        bwd = mirrored(fwd, s0.t)
    else:
        bwd = lab.evolve(s0, T_b, "backward", exit_mode=exit_mode)
    idx = set_index(bwd.fate.kind, fwd.fate.kind)
    desc = dict(descriptor or {})
    desc.setdefault("energy_excess", E - lab.gs.JQ)
    return NineSetResult(bwd.fate, fwd.fate, idx, desc, (bwd, fwd))


# ------------------------------------------------------------------ bisection

def shadow_time(rec: TrajectoryRecord, level: float) -> float:
    """Elapsed time until ``d_Q`` first reaches ``level`` (the full span if never)."""
    t0 = rec.samples[0].t
    for s in rec.samples:
        if s.dQ >= level:
            return abs(s.t - t0)
    return abs(rec.samples[-1].t - t0)


@dataclass
class SeparatrixResult:
    a_star: float
    window: float
    record: TrajectoryRecord
    history: List[Tuple[float, float]]
    a_lo: float
    a_hi: float
    fate_lo: FateKind
    fate_hi: FateKind
    iterations: int
    midpoints: List[Tuple[float, float]] = field(default_factory=list)

    def shadowing_fit(self, k: Optional[float] = None, min_points: int = 5):
        """Least-squares ``tau = s log(1/w) + c``; returns ``(slope, intercept, R^2)``."""
        w = np.array([h[0] for h in self.history])
        tau = np.array([h[1] for h in self.history])
        x = np.log(1.0 / w)
        if x.size < min_points:
            raise ValueError("too few bisection steps for a shadowing fit")
        A = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(A, tau, rcond=None)
        pred = A @ coef
        ss_res = float(np.sum((tau - pred) ** 2))
        ss_tot = float(np.sum((tau - tau.mean()) ** 2))
        return float(coef[0]), float(coef[1]), 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


class BisectionError(RuntimeError):
    pass


def bisect_separatrix(family: Callable[[float], State], a_lo: float, a_hi: float,
                      direction: str, T: float, lab: Lab, window: float = 1e-12,
                      exit_mode: bool = True, max_iter: int = 80) -> SeparatrixResult:
    """Bisect between a scattering and a blow-up datum of ``family``.

    Returns the midpoint whose trajectory shadowed ``+-Q`` longest.  ``history``
    pairs each bracket width with the shorter shadowing time of the two bracket
    ends; ``midpoints`` keeps the raw ``(a, shadow time)`` of every run.
    """
    def run(a):
        return lab.evolve(family(a), T, direction, exit_mode=exit_mode)

    r_lo, r_hi = run(a_lo), run(a_hi)
    f_lo, f_hi = r_lo.fate.kind, r_hi.fate.kind
    ends = {f_lo, f_hi}
    if ends != {FateKind.SCATTER, FateKind.BLOWUP}:
        raise BisectionError(f"fates at the ends are {f_lo.value} / {f_hi.value}")
    level = lab.p.delta_S
    lo, hi = a_lo, a_hi
    tau_lo, tau_hi = shadow_time(r_lo, level), shadow_time(r_hi, level)
    best, best_tau = None, -1.0
    history, raw = [], []
    it = 0
    while abs(hi - lo) > window and it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        rec = run(mid)
        it += 1
        tau = shadow_time(rec, level)
        raw.append((mid, tau))
        kind = rec.fate.kind
        if kind == f_lo:
            lo, tau_lo = mid, tau
        elif kind == f_hi:
            hi, tau_hi = mid, tau
        else:
            # trapped midpoint: certify it with a bracket of width ``window``
            best, best_tau = (mid, rec), tau
            pl, ph = mid - window / 2.0, mid + window / 2.0
            if (run(pl).fate.kind, run(ph).fate.kind) == (f_lo, f_hi):
                lo, hi = pl, ph
            history.append((abs(hi - lo), tau))
            break
        # both ends lie within the window of a*: the shorter shadowing is guaranteed
        history.append((abs(hi - lo), min(tau_lo, tau_hi)))
        if tau >= best_tau:
            best, best_tau = (mid, rec), tau
    if best is None:
        raise BisectionError("no bisection step was taken")
    return SeparatrixResult(best[0], abs(hi - lo), best[1], history, lo, hi, f_lo, f_hi, it, raw)


# ------------------------------------------------------------------ witnesses

@dataclass
class WitnessSpec:
    """How one set's witness is built."""

    index: int
    lam: float = 0.0
    lamdot: float = 0.0
    bisect: Optional[str] = None          # "lamdot" or "lam"
    bracket: Tuple[float, float] = (0.0, 0.0)
    direction: str = "forward"
    gamma_norm: float = 0.0


def witness_specs(lab: Lab, theta: float = 0.1, eps: Optional[float] = None) -> List[WitnessSpec]:
    te = theta * (eps if eps is not None else lab.eps)
    k = lab.k
    return [
        WitnessSpec(1, lam=-te),
        WitnessSpec(2, lam=+te),
        WitnessSpec(3, lamdot=-k * te),
        WitnessSpec(4, lamdot=+k * te),
        WitnessSpec(5, lam=-te, bisect="lamdot", bracket=(0.0, 2 * k * te)),
        WitnessSpec(6, lam=-te, bisect="lamdot", bracket=(-2 * k * te, 0.0), direction="backward"),
        WitnessSpec(7, lam=+te, bisect="lamdot", bracket=(-2 * k * te, 0.0)),
        WitnessSpec(8, lam=+te, bisect="lamdot", bracket=(0.0, 2 * k * te), direction="backward"),
        WitnessSpec(9, bisect="lam", bracket=(-te, te), gamma_norm=0.5 * (eps if eps is not None else lab.eps)),
    ]


def smooth_gamma(lab: Lab, norm_E: float) -> RadialField:
    """Fixed smooth shell orthogonal to ``rho`` with ``<L+ g|g>/2 = norm_E^2``."""
    g = lab.grid
    f = RadialField(g, np.exp(-((g.r - 3.0) / 1.5) ** 2))
    gam = project_plus(f, lab.spec)
    q = quadratic_form(lab.spec, lab.gs, gam)
    return (norm_E * np.sqrt(2.0 / q)) * gam if norm_E > 0 else g.zeros()


@dataclass
class Witness:
    spec: WitnessSpec
    result: NineSetResult
    separatrix: Optional[SeparatrixResult] = None

    def to_dict(self) -> dict:
        d = self.result.to_dict()
        d["construction"] = {"lam": self.spec.lam, "lamdot": self.spec.lamdot,
                             "bisect": self.spec.bisect, "bracket": list(self.spec.bracket),
                             "direction": self.spec.direction, "gamma_norm": self.spec.gamma_norm}
        if self.separatrix is not None:
            d["separatrix"] = {"a_star": self.separatrix.a_star, "window": self.separatrix.window,
                               "iterations": self.separatrix.iterations,
                               "shadow_time": self.separatrix.history[-1][1] if self.separatrix.history else None}
        return d


def build_witness(ws: WitnessSpec, lab: Lab, T: float = 40.0, window: float = 1e-12,
                  trap_margin: float = 0.5,
                  bracket: Optional[Tuple[float, float]] = None) -> Witness:
    """Construct and classify the witness of one set.

    Bisected witnesses are classified with full detectors; the trapped direction
    is run up to a horizon just short of the measured shadowing time, since
    rounding makes any trapping finite.
    """
    gam = smooth_gamma(lab, ws.gamma_norm)
    if ws.bisect is None:
        s0 = lab.datum(ws.lam, ws.lamdot, gam)
        res = classify_nine(s0, T, lab, {"lam": ws.lam, "lamdot": ws.lamdot})
        return Witness(ws, res)
    if ws.bisect == "lamdot":
        fam = lambda a: lab.datum(ws.lam, a, gam)  # noqa: E731
    else:
        fam = lambda a: lab.datum(a, 0.0, gam)  # noqa: E731
    lo, hi = bracket if bracket is not None else ws.bracket
    sep = bisect_separatrix(fam, lo, hi, ws.direction, T, lab, window)
    a = sep.a_star
    s0 = fam(a)
    trap_T = max(lab.p.T_tail + lab.sample_every, shadow_time(sep.record, lab.p.delta_S) - trap_margin)
    if ws.index == 9:
        T_f = T_b = trap_T
    elif ws.direction == "forward":
        T_f, T_b = trap_T, T
    else:
        T_f, T_b = T, trap_T
    res = classify_nine(s0, T_f, lab, {"lam": ws.lam if ws.bisect == "lamdot" else a,
                                       "lamdot": a if ws.bisect == "lamdot" else 0.0,
                                       "trap_horizon": trap_T}, T_backward=T_b)
    return Witness(ws, res, sep)


def narrow_bracket(ws: WitnessSpec, a_star: float, lab: Lab, T: float = 40.0,
                   half: float = 1e-6, grow: float = 10.0) -> Tuple[float, float]:
    """Bracket around a known separatrix point whose ends scatter and blow up on ``lab``."""
    gam = smooth_gamma(lab, ws.gamma_norm)
    if ws.bisect == "lamdot":
        fam = lambda a: lab.datum(ws.lam, a, gam)  # noqa: E731
    else:
        fam = lambda a: lab.datum(a, 0.0, gam)  # noqa: E731
    lo_full, hi_full = ws.bracket
    while True:
        lo, hi = max(lo_full, a_star - half), min(hi_full, a_star + half)
        fl = lab.evolve(fam(lo), T, ws.direction, exit_mode=True).fate.kind
        fh = lab.evolve(fam(hi), T, ws.direction, exit_mode=True).fate.kind
        if {fl, fh} == {FateKind.SCATTER, FateKind.BLOWUP}:
            return lo, hi
        if (lo, hi) == (lo_full, hi_full):
            return lo_full, hi_full
        half *= grow


@dataclass
class TwoResolutionWitness:
    coarse: Witness
    fine: Witness

    @property
    def agree(self) -> bool:
        i = self.coarse.spec.index
        return self.coarse.result.set_index == i and self.fine.result.set_index == i

    def to_dict(self) -> dict:
        return {"index": self.coarse.spec.index, "agree": self.agree,
                "coarse": self.coarse.to_dict(), "fine": self.fine.to_dict()}


def verify_witness(ws: WitnessSpec, lab: Lab, fine: Lab, T: float = 40.0,
                   window: float = 1e-12, fine_window: float = 1e-10) -> TwoResolutionWitness:
    """Witness on ``lab``, then rebuilt on ``fine`` from a bracket around the coarse point."""
    w1 = build_witness(ws, lab, T, window)
    if w1.separatrix is None:
        return TwoResolutionWitness(w1, build_witness(ws, fine, T))
    br = narrow_bracket(ws, w1.separatrix.a_star, fine, T)
    return TwoResolutionWitness(w1, build_witness(ws, fine, T, fine_window, bracket=br))


def nine_set_witnesses(lab: Lab, T: float = 40.0, theta: float = 0.1, window: float = 1e-12,
                       threads: int = 1, only: Optional[Sequence[int]] = None) -> List[Witness]:
    specs = [w for w in witness_specs(lab, theta) if only is None or w.index in only]
    return parallel_map(lambda w: build_witness(w, lab, T, window), specs, threads)


# ------------------------------------------------------------------ audits

@dataclass
class OnePassReport:
    R: float
    entries: List[float]
    exits: List[float]
    violations: List[float]
    signs_outside: List[int]
    sign_constant: bool
    verdict: bool


def one_pass_audit(rec: TrajectoryRecord, R: float, p: ThresholdParams) -> OnePassReport:
    """Scan ``d_Q`` for returns to the ``R``-ball after the first exit."""
    d = rec.series("dQ")
    t = rec.times
    entries, exits, viol = [], [], []
    for i in range(1, d.size):
        if d[i - 1] < R <= d[i]:
            exits.append(float(t[i]))
        elif d[i - 1] >= R > d[i]:
            entries.append(float(t[i]))
    if exits:
        i0 = int(np.nonzero(t == exits[0])[0][0])
        viol = [float(t[i]) for i in range(i0 + 1, d.size) if d[i] <= R]
        after = rec.samples[i0:]
    else:
        after = []
    signs = [s.sigma_sign for s in after if s.sigma_sign != INSIDE_BALL]
    changes = [signs[0]] if signs else []
    for sg in signs[1:]:
        if sg != changes[-1]:
            changes.append(sg)
    const = len(changes) <= 1
    return OnePassReport(R, entries, exits, viol, changes, const, not viol and const)


@dataclass
class EjectionFit:
    window: Tuple[float, float]
    rate: float
    k: float
    rel_error: float
    s_sign: int
    sign_ok: bool
    dq_over_lam: Tuple[float, float]
    k_margin: float
    k_ratio_min: float
    monotone: bool

    @property
    def ok(self) -> bool:
        return self.rel_error <= 0.1 and self.sign_ok and self.monotone


class NoEjectionError(RuntimeError):
    pass


def ejection_audit(rec: TrajectoryRecord, p: ThresholdParams, spec: SpectralData,
                   R: Optional[float] = None, c_K: float = 0.1) -> EjectionFit:
    """Fit the exponential growth of ``d_Q`` over the episode from ``R`` to ``delta_X``."""
    R = p.R_star if R is None else R
    d = rec.series("dQ")
    t = np.abs(rec.times - rec.times[0])
    # data already past R (but inside delta_X) start the episode at t = 0
    ia = 0 if R <= d[0] < p.delta_X else next(
        (i for i in range(1, d.size) if d[i - 1] < R <= d[i]), None)
    if ia is None:
        raise NoEjectionError("no exit through R")
    ib = next((i for i in range(ia, d.size) if d[i] >= p.delta_X), None)
    if ib is None or ib - ia < 3:
        raise NoEjectionError("episode does not reach delta_X")
    sl = slice(ia, ib + 1)
    rate = float(np.polyfit(t[sl], np.log(d[sl]), 1)[0])
    lam = rec.series("lam")[sl]
    s_sign = -1 if lam[-1] > 0 else 1
    ratio = d[sl] / np.maximum(-s_sign * lam, 1e-300)
    sign_ok = bool(np.all(-s_sign * lam > 0))
    K0, K2 = rec.series("K0")[sl], rec.series("K2")[sl]
    sK = np.minimum(s_sign * K0, s_sign * K2)
    excess = d[sl] - p.C_star * d[ia]
    margin = float(np.min(sK - c_K * excess))
    pos = excess > 0
    kratio = float(np.min(sK[pos] / excess[pos])) if np.any(pos) else float("nan")
    return EjectionFit((float(rec.times[ia]), float(rec.times[ib])), rate, spec.k,
                       abs(rate - spec.k) / spec.k, s_sign, sign_ok,
                       (float(ratio.min()), float(ratio.max())), margin, kratio,
                       bool(np.all(np.diff(d[sl]) > 0)))


def decay_rate(rec: TrajectoryRecord, drop: float = 3.0, field_name: str = "dQ") -> float:
    """Exponential decay rate of ``|field|`` from the start until it has dropped by ``drop``
    (or reached its minimum)."""
    y = np.abs(rec.series(field_name))
    t = np.abs(rec.times - rec.times[0])
    imin = int(np.argmin(y))
    stop = next((i for i in range(y.size) if y[i] <= y[0] / drop), imin)
    stop = max(min(stop, imin), 3)
    return float(-np.polyfit(t[: stop + 1], np.log(y[: stop + 1]), 1)[0])


# ------------------------------------------------------------------ threshold solutions

@dataclass
class ThresholdSolution:
    sign: int
    s: float
    c: float
    backward: TrajectoryRecord
    forward: TrajectoryRecord
    backward_rate: float

    def rate_error(self, k: float) -> float:
        return abs(self.backward_rate - k) / k


class ThresholdError(RuntimeError):
    pass


def threshold_datum(lab: Lab, s: float) -> Tuple[State, float]:
    """``(Q + s rho, c rho)`` with ``E = J(Q)`` and ``c`` of the sign of ``s``."""
    base = lab.datum(s, 0.0)
    gap = lab.gs.JQ - energy(base)
    if gap < 0:
        raise ThresholdError("no real root for c(s): static energy exceeds J(Q)")
    c = float(np.sign(s)) * np.sqrt(2.0 * gap)
    return lab.datum(s, c), c


def construct_threshold_W(lab: Lab, sign: int, s: float = 1e-4, T: float = 40.0,
                          T_back: float = 3.0, tol: float = 0.25) -> ThresholdSolution:
    """Threshold-energy datum on the unstable direction; backward it decays to ``Q``."""
    s = abs(s) * (1 if sign > 0 else -1)
    s0, c = threshold_datum(lab, s)
    bwd = lab.evolve(s0, T_back, "backward", stop_on_fate=False)
    rate = decay_rate(bwd, drop=30.0)
    if abs(rate - lab.k) > tol * lab.k:
        raise ThresholdError(f"backward approach rate {rate:.4g} is not within {tol:.0%} of k")
    fwd = lab.evolve(s0, T, "forward")
    return ThresholdSolution(sign, s, c, bwd, fwd, rate)


# ------------------------------------------------------------------ phase portrait

@dataclass
class PortraitResult:
    lambdas: np.ndarray
    lamdots: np.ndarray
    fwd: np.ndarray        # object array of FateKind
    bwd: np.ndarray
    k: float
    refined: Optional[np.ndarray] = None

    def set_indices(self) -> np.ndarray:
        out = np.zeros(self.fwd.shape, dtype=int)
        for idx in np.ndindex(self.fwd.shape):
            out[idx] = set_index(self.bwd[idx], self.fwd[idx]) or 0
        return out

    def boundary_points(self) -> np.ndarray:
        """Forward blow-up/scatter transitions along each ``lambda`` column."""
        pts = []
        for i, lam in enumerate(self.lambdas):
            col = self.fwd[i]
            for j in range(len(self.lamdots) - 1):
                a, b = col[j], col[j + 1]
                if {a, b} == {FateKind.SCATTER, FateKind.BLOWUP}:
                    pts.append((lam, 0.5 * (self.lamdots[j] + self.lamdots[j + 1])))
        return np.array(pts)

    def boundary_slope(self) -> Tuple[float, float]:
        """Least-squares slope and intercept of ``lamdot`` against ``lambda`` on the boundary
        (refined crossings when available)."""
        pts = self.refined if self.refined is not None else self.boundary_points()
        if len(pts) < 3:
            raise ValueError("boundary not resolved")
        slope, icpt = np.polyfit(pts[:, 0], pts[:, 1], 1)
        return float(slope), float(icpt)

    def write(self, path) -> None:
        si = self.set_indices()
        lines = ["lambda lamdot fate_fwd fate_bwd set_index"]
        for i, lam in enumerate(self.lambdas):
            for j, ld in enumerate(self.lamdots):
                lines.append(f"{lam:.17g} {ld:.17g} {self.fwd[i, j].value} "
                             f"{self.bwd[i, j].value} {si[i, j]}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def phase_portrait(lab: Lab, extent: Optional[float] = None, n_side: int = 41,
                   T: float = 8.0, threads: int = 1) -> PortraitResult:
    """Forward fates on a symmetric ``(lambda, lamdot)`` grid with ``gamma = 0``.

    Backward fates follow from time reversal: the backward fate of
    ``(lam, lamdot)`` is the forward fate of ``(lam, -lamdot)``.
    """
    if n_side % 2 == 0:
        raise ValueError("n_side must be odd (the grid is symmetric)")
    k = lab.k
    extent = extent if extent is not None else lab.p.delta_X / (2.0 * k)
    if extent > lab.p.delta_E:
        raise ValueError("portrait extent exceeds delta_E")
    lams = np.linspace(-extent, extent, n_side)
    lds = k * lams.copy()
    nodes = [(i, j) for i in range(n_side) for j in range(n_side)]

    def run(ij):
        i, j = ij
        if lams[i] == 0 and lds[j] == 0:
            return FateKind.UNDETERMINED
        rec = lab.evolve(lab.datum(lams[i], lds[j]), T, "forward", exit_mode=True)
        return rec.fate.kind

    fates = parallel_map(run, nodes, threads)
    fwd = np.empty((n_side, n_side), dtype=object)
    for (i, j), f in zip(nodes, fates):
        fwd[i, j] = f
    bwd = fwd[:, ::-1].copy()
    return PortraitResult(lams, lds, fwd, bwd, k)


def refine_boundary(lab: Lab, portrait: PortraitResult, T: float = 8.0, steps: int = 12,
                    threads: int = 1) -> np.ndarray:
    """Bisect ``lamdot`` on each grid crossing; the grid alone quantizes the boundary."""
    fwd = portrait.fwd
    jobs = []
    for i, lam in enumerate(portrait.lambdas):
        for j in range(len(portrait.lamdots) - 1):
            a, b = fwd[i, j], fwd[i, j + 1]
            if {a, b} == {FateKind.SCATTER, FateKind.BLOWUP}:
                jobs.append((lam, portrait.lamdots[j], portrait.lamdots[j + 1], a))

    def run(job):
        lam, lo, hi, f_lo = job
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            f = lab.evolve(lab.datum(lam, mid), T, "forward", exit_mode=True).fate.kind
            if f == f_lo:
                lo = mid
            elif f in (FateKind.SCATTER, FateKind.BLOWUP):
                hi = mid
            else:
                return (lam, mid)
        return (lam, 0.5 * (lo + hi))

    pts = np.array(parallel_map(run, jobs, threads))
    portrait.refined = pts
    return pts


# ------------------------------------------------------------------ one-pass ensemble

def sample_one_pass_ensemble(lab: Lab, n: int, rng, max_tries: int = 100000) -> List[State]:
    """Random data with ``E < J(Q) + eps_star^2`` and ``d_Q < R_star``."""
    p, k, g = lab.p, lab.k, lab.grid
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("ensemble rejection sampling did not converge")
        lam = rng.uniform(-1, 1) * p.R_star / (2 * k)
        lamdot = rng.uniform(-1, 1) * p.R_star / 2
        gam = project_plus(random_bump(g, rng), lab.spec)
        gamd = project_plus(random_bump(g, rng), lab.spec)
        q = quadratic_form(lab.spec, lab.gs, gam)
        scale = rng.uniform(0, 1) * p.eps_star / np.sqrt(max(q, 1e-300))
        scaled = rng.uniform(0, 1) * p.eps_star / np.sqrt(max(l2_sq(gamd), 1e-300))
        sigma = 1 if rng.uniform() < 0.5 else -1
        s = lab.datum(lam, lamdot, scale * gam, scaled * gamd, sigma)
        if energy(s) >= lab.gs.JQ + p.eps_star**2:
            continue
        if distance_dQ(s, lab.spec, lab.gs, p).dQ >= p.R_star:
            continue
        out.append(s)
    return out


@dataclass
class EnsembleReport:
    n_total: int
    n_exited: int
    n_returns: int
    n_sign_flips: int
    fates: dict
    reports: List[OnePassReport]

    @property
    def ok(self) -> bool:
        return self.n_returns == 0 and self.n_sign_flips == 0


def one_pass_ensemble(lab: Lab, n: int, rng, T: float = 40.0, threads: int = 1,
                      R: Optional[float] = None) -> EnsembleReport:
    R = lab.p.R_star if R is None else R
    data = sample_one_pass_ensemble(lab, n, rng)
    recs = parallel_map(lambda s: lab.evolve(s, T, "forward"), data, threads)
    reps = [one_pass_audit(r, R, lab.p) for r in recs]
    exited = [rp for rp in reps if rp.exits]
    fates = {}
    for r in recs:
        fates[r.fate.kind.value] = fates.get(r.fate.kind.value, 0) + 1
    return EnsembleReport(len(recs), len(exited), sum(1 for rp in exited if rp.violations),
                          sum(1 for rp in exited if not rp.sign_constant), fates, reps)
