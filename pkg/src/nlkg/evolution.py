"""Time integration of ``u_tt = Delta u - u + u^3`` with fate detection.

The scheme is Strang splitting: exact sine-spectral rotation for the linear part
and an exact kick ``udot += dt*u^3``.  Near ``+-Q`` the splitting is centred on
``+-Q`` (the linear substep rotates ``u -+ Q`` and the kick uses ``u^3 -+ Q^3``),
which leaves ``+-Q`` exactly stationary; both variants are symmetric and
reversible.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .functionals import (DIAG_COLUMNS, DIAG_VERSION, INSIDE_BALL, DiagnosticsSample,
                          ThresholdParams, VirialCutoff, diagnose)
from .ground_state import GroundStateData
from .linearized import SpectralData
from .radial import (FOUR_PI, RadialField, RadialGrid, State, dst, support_radius)

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ settings and fates

@dataclass(frozen=True)
class StepControl:
    """Adaptive step rule ``dt = min(dt_max, dt_max*(amp_ref/amp)^2)``, switching
    to ``dt ~ 1/amp`` above ``amp_switch`` so that blow-up costs log-many steps."""

    dt_max: float = 1e-3
    dt_min: float = 1e-13
    amp_ref: float = 5.0
    amp_switch: float = 10.0
    center_frac: float = 0.1

    def dt_for(self, amp: float) -> float:
        """Step for sup-norm ``amp``, rounded down to the ladder ``dt_max 2^(-j/8)``."""
        c2 = self.dt_max * self.amp_ref**2
        if amp <= self.amp_ref:
            return self.dt_max
        if amp <= self.amp_switch:
            dt = c2 / amp**2
        else:
            dt = c2 / (self.amp_switch * amp)
        j = np.ceil(-8.0 * np.log2(dt / self.dt_max))
        return self.dt_max * 2.0 ** (-j / 8.0)


class FateKind(str, enum.Enum):
    SCATTER = "ScatterToZero"
    BLOWUP = "BlowUp"
    TRAPPED_PLUS = "TrappedByPlusQ"
    TRAPPED_MINUS = "TrappedByMinusQ"
    UNDETERMINED = "Undetermined"

    @property
    def trapped(self) -> bool:
        return self in (FateKind.TRAPPED_PLUS, FateKind.TRAPPED_MINUS)


@dataclass
class Fate:
    kind: FateKind
    witness: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "witness": self.witness}


EVENT_KINDS = ("ball-entry", "ball-exit", "sign-flip", "blowup-declared",
               "scatter-declared", "horizon")


@dataclass
class TrajectoryRecord:
    samples: List[DiagnosticsSample]
    events: List[Tuple[float, str]]
    fate: Fate
    direction: str = "forward"
    meta: dict = field(default_factory=dict)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.series("t")

    @property
    def one_pass_violation(self) -> bool:
        """More than one ball entry or exit after the first exit."""
        kinds = [k for _, k in self.events if k in ("ball-entry", "ball-exit")]
        if "ball-exit" not in kinds:
            return False
        after = kinds[kinds.index("ball-exit") + 1:]
        return after.count("ball-entry") > 1 or after.count("ball-exit") > 1

    def max_energy_drift(self) -> float:
        E = self.series("E")
        return float(np.max(np.abs(E - E[0]))) if E.size else 0.0

    # ---- output
    def sidecar(self) -> dict:
        return {"fate": self.fate.kind.value,
                "events": [{"t": t, "kind": k} for t, k in self.events],
                "witness": self.fate.witness,
                "direction": self.direction,
                "columns_version": DIAG_VERSION,
                "meta": self.meta}

    def write(self, directory, stem: str = "trajectory") -> Tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = d / f"{stem}.csv", d / f"{stem}.json"
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(DIAG_COLUMNS)
            for s in self.samples:
                wr.writerow(s.row())
        json_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True,
                                        default=_json_default) + "\n")
        return csv_path, json_path

    @classmethod
    def read(cls, directory, stem: str = "trajectory") -> "TrajectoryRecord":
        d = Path(directory)
        with open(d / f"{stem}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != DIAG_COLUMNS:
            raise ValueError("unexpected trajectory columns")
        side = json.loads((d / f"{stem}.json").read_text())
        return cls([DiagnosticsSample.from_row(r) for r in rows[1:]],
                   [(e["t"], e["kind"]) for e in side["events"]],
                   Fate(FateKind(side["fate"]), side["witness"]), side["direction"],
                   side.get("meta", {}))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(f"not serialisable: {type(o)}")


# ------------------------------------------------------------------ stepper

class Stepper:
    """Strang splitting on sine-mode coefficients of ``(w, wdot)``."""

    def __init__(self, grid: RadialGrid, gs: Optional[GroundStateData] = None,
                 center_frac: float = 0.1):
        self.grid = grid
        self.r2 = grid.r_int**2
        self.om = np.asarray(grid.omega)
        self.center_frac = center_frac
        if gs is not None:
            if gs.grid != grid:
                raise ValueError("ground state lives on another grid")
            wq = gs.Q.w
            self.WQ = dst(wq)
            self.fQ = wq**3 / self.r2
            self.nQ = float(np.linalg.norm(self.WQ))
        else:
            self.WQ = None
        self._trig = {}
        self.W = self.V = None
        self.t = 0.0
        self.w_mid = None

    def load(self, s: State):
        self.W, self.V, self.t = dst(s.u.w), dst(s.udot.w), float(s.t)
        self.w_mid = s.u.w
        return self

    def state(self) -> State:
        g = self.grid
        return State(RadialField.from_w(g, dst(self.W)), RadialField.from_w(g, dst(self.V)), self.t)

    def _cs(self, half: float):
        cs = self._trig.get(half)
        if cs is None:
            c, s = np.cos(self.om * half), np.sin(self.om * half)
            cs = (c, s / self.om, self.om * s)
            if len(self._trig) >= 64:
                self._trig.pop(next(iter(self._trig)))
            self._trig[half] = cs
        return cs

    def auto_center(self) -> int:
        if self.WQ is None:
            return 0
        proj = float(self.W @ self.WQ)
        sig = 1 if proj >= 0 else -1
        if np.linalg.norm(self.W - sig * self.WQ) <= self.center_frac * self.nQ:
            return sig
        return 0

    def step(self, dt: float, center: Optional[int] = None):
        if center is None:
            center = self.auto_center()
        if center and self.WQ is None:
            raise ValueError("centred step needs the ground state")
        c, sw, ws = self._cs(0.5 * dt)
        W, V = self.W, self.V
        if center:
            cW = center * self.WQ
            X = W - cW
            W, V = c * X + sw * V + cW, c * V - ws * X
        else:
            W, V = c * W + sw * V, c * V - ws * W
        w = dst(W)
        f = w**3 / self.r2
        if center:
            f = f - center * self.fQ
        V = V + dt * dst(f)
        if center:
            X = W - cW
            W, V = c * X + sw * V + cW, c * V - ws * X
        else:
            W, V = c * W + sw * V, c * V - ws * W
        self.W, self.V, self.w_mid = W, V, w
        self.t += dt

    def amp(self) -> float:
        """Sup norm of ``u`` at the last kick."""
        return float(np.max(np.abs(self.w_mid / self.grid.r_int)))

    def energy_norm_sq(self) -> float:
        """``||u||_{H^1}^2 + ||udot||^2`` from mode coefficients."""
        return FOUR_PI * self.grid.h * float(np.sum(self.om**2 * self.W**2 + self.V**2))

    def uudot(self) -> float:
        return FOUR_PI * self.grid.h * float(self.W @ self.V)


def step(s: State, dt: float, gs: Optional[GroundStateData] = None, center: int = 0,
         dt_max: Optional[float] = None) -> State:
    """One Strang step.  ``center`` = +-1 centres the splitting on ``+-Q`` (needs ``gs``)."""
    if dt_max is not None and abs(dt) > dt_max:
        raise ValueError(f"|dt| = {abs(dt)} exceeds dt_max = {dt_max}")
    if dt == 0:
        return State(s.u, s.udot, s.t)
    st = Stepper(s.grid, gs if center else None).load(s)
    st.step(dt, center)
    if not (np.all(np.isfinite(st.W)) and np.all(np.isfinite(st.V))):
        raise FloatingPointError("non-finite state after step (blow-up)")
    return st.state()


# ------------------------------------------------------------------ detectors

def fit_blowup_rate(times: Sequence[float], norms: Sequence[float]):
    """Fit ``N(t) = c (T* - t)^(-alpha)`` over the last decade of ``N``.

    Returns ``(T_star, alpha)``; ``T*`` is chosen by minimising the log-log residual.
    """
    t = np.asarray(times, dtype=float)
    N = np.asarray(norms, dtype=float)
    m = N >= N[-1] / 10.0
    if m.sum() < 4:
        m = np.zeros_like(m)
        m[-min(len(N), 8):] = True
    t, N = t[m], N[m]
    span = t[-1] - t[0]
    best = (np.inf, t[-1], float("nan"))
    if span <= 0:
        return best[1], best[2]
    for gap in np.geomspace(1e-4 * span, 10 * span, 200):
        Ts = t[-1] + gap
        X = np.log(Ts - t)
        A = np.vstack([np.ones_like(X), -X]).T
        coef, *_ = np.linalg.lstsq(A, np.log(N), rcond=None)
        res = float(np.sum((A @ coef - np.log(N)) ** 2))
        if res < best[0]:
            best = (res, Ts, float(coef[1]))
    return best[1], best[2]


def detect_blowup(history: Sequence[Tuple[float, float, float, float]], p: ThresholdParams,
                  dt: float, ctl: StepControl) -> Optional[dict]:
    """``history`` rows are ``(t, energy_norm, amp, <u|udot>)``."""
    if not history:
        return None
    t, N, amp, uud = history[-1]
    reason = None
    if not np.isfinite(amp):
        reason = "non-finite"
    elif amp >= p.u_max:
        reason = "amplitude-cap"
    elif abs(dt) < ctl.dt_min:
        reason = "dt-underflow"
    if reason is None:
        return None
    h = np.array([row for row in history if np.all(np.isfinite(row))])
    w = {"reason": reason, "t_last": float(t), "amp_last": float(amp)}
    if h.shape[0] >= 4:
        Ts, alpha = fit_blowup_rate(h[:, 0], h[:, 1])
        tail = h[h[:, 1] >= h[-1, 1] / 10.0]
        w.update(T_star=float(Ts), alpha=float(alpha),
                 uudot_increasing=bool(np.all(np.diff(tail[:, 3]) > 0)) if len(tail) > 1 else True)
    return w


def detect_scatter(samples: Sequence[DiagnosticsSample], increments: Sequence[Tuple[float, float]],
                   p: ThresholdParams, slack: float = 0.1) -> Optional[dict]:
    """Four-condition window test over the trailing ``T_win`` of samples.

    ``increments`` are ``(t, D)`` with ``D`` the Duhamel increment
    ``||s(t) - U(dt) s(t - dt)||_E`` over consecutive comparison intervals.
    """
    if not samples:
        return None
    t_end = samples[-1].t
    win = [s for s in samples if abs(t_end - s.t) <= p.T_win + 1e-9]
    if abs(win[-1].t - win[0].t) < p.T_win - 1e-9:
        return None
    for s in win:
        if s.sigma_sign != 1 or s.dQ < p.R_star or s.potential_ratio > p.eta_scat:
            return None
    inc = [d for (t, d) in increments if abs(t_end - t) <= p.T_win + 1e-9]
    if len(inc) < 2:
        return None
    scale = win[-1].energy_norm
    for a, b in zip(inc[:-1], inc[1:]):
        if b > (1.0 + slack) * a + 1e-12 * scale:
            return None
    return {"onset": float(win[0].t), "ratio_max": max(s.potential_ratio for s in win),
            "dQ_min": min(s.dQ for s in win), "increments": [float(x) for x in inc]}


def detect_trapped(rec_samples: Sequence[DiagnosticsSample], p: ThresholdParams) -> Optional[int]:
    """Sign of the trapping state if ``d_Q <= delta_S`` throughout the final ``T_tail``."""
    if not rec_samples:
        return None
    t_end = rec_samples[-1].t
    tail = [s for s in rec_samples if abs(t_end - s.t) <= p.T_tail + 1e-9]
    if abs(tail[-1].t - tail[0].t) < p.T_tail - 1e-9:
        return None
    if all(s.dQ <= p.delta_S for s in tail):
        sig = {s.sigma for s in tail}
        if len(sig) == 1:
            return sig.pop()
    return None


# ------------------------------------------------------------------ driver

def _reverse_sample(s: DiagnosticsSample) -> DiagnosticsSample:
    """Diagnostics of the time-reversed state at time ``-t``."""
    from dataclasses import replace
    return replace(s, t=-s.t, lamdot=-s.lamdot, lam_plus=s.lam_minus, lam_minus=s.lam_plus,
                   Vw=-s.Vw, uudot=-s.uudot)


def evolve(s0: State, horizon: float, p: ThresholdParams, gs: GroundStateData,
           spec: SpectralData, sample_every: float = 0.05, ctl: Optional[StepControl] = None,
           direction: str = "forward", exit_mode: bool = False, with_virial: bool = False,
           cutoff: Optional[VirialCutoff] = None, check_guard: bool = True,
           stop_on_fate: bool = True, centered: bool = True) -> TrajectoryRecord:
    """Evolve ``s0`` up to ``|t - t0| = horizon`` and classify the outcome.

    ``direction='backward'`` evolves ``(u, -udot)`` forward and reports the
    physical backward trajectory (times ``t0 - tau``).  With ``exit_mode`` the
    fate is read off the sign functional as soon as ``d_Q`` first climbs through
    ``delta_X`` after having been below it (fast classification for bisection).
    """
    ctl = ctl or StepControl()
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    g = s0.grid
    if check_guard:
        g.guard(support_radius(s0), horizon)
    back = direction == "backward"
    t0 = s0.t
    start = State(s0.u, -s0.udot if back else s0.udot, 0.0)
    st = Stepper(g, gs if centered else None, ctl.center_frac).load(start)

    samples: List[DiagnosticsSample] = []
    events: List[Tuple[float, str]] = []
    increments: List[Tuple[float, float]] = []
    history: List[Tuple[float, float, float, float]] = []
    fate = None
    prev_snap = None
    inc_every = max(p.T_win / 4.0, sample_every)
    next_inc = 0.0
    was_inside = None
    last_sign = None
    below_X = False
    rising = 0

    def phys_t(tau):
        return t0 - tau if back else t0 + tau

    def record(tau) -> DiagnosticsSample:
        s = st.state()
        smp = diagnose(State(s.u, s.udot, tau), gs, spec, p, cutoff=cutoff, with_virial=with_virial)
        if back:
            smp = _reverse_sample(smp)
        from dataclasses import replace
        smp = replace(smp, t=phys_t(tau))
        samples.append(smp)
        return smp

    n_steps = 0
    next_sample = 0.0
    while True:
        tau = st.t
        if tau >= next_sample - 1e-12:
            smp = record(tau)
            next_sample += sample_every
            inside = smp.sigma_sign == INSIDE_BALL
            if was_inside is not None and inside != was_inside:
                events.append((smp.t, "ball-entry" if inside else "ball-exit"))
            was_inside = inside
            if not inside:
                if last_sign is not None and smp.sigma_sign != last_sign:
                    events.append((smp.t, "sign-flip"))
                last_sign = smp.sigma_sign
            # Duhamel increments on a coarse comparison grid
            if tau >= next_inc - 1e-12:
                cur = (st.W.copy(), st.V.copy(), tau)
                if prev_snap is not None:
                    Wf, Vf = _free_modes(g, prev_snap, tau - prev_snap[2])
                    D = np.sqrt(FOUR_PI * g.h * float(np.sum(st.om**2 * (st.W - Wf) ** 2 + (st.V - Vf) ** 2)))
                    increments.append((smp.t, D))
                prev_snap = cur
                next_inc += inc_every
            if exit_mode:
                if smp.dQ < p.delta_X:
                    below_X = True
                if len(samples) >= 2:
                    rising = rising + 1 if smp.dQ > samples[-2].dQ else 0
                if below_X and smp.dQ >= p.delta_X and rising >= 3 and smp.sigma_sign != INSIDE_BALL:
                    kind = FateKind.BLOWUP if smp.sigma_sign < 0 else FateKind.SCATTER
                    events.append((smp.t, "blowup-declared" if kind is FateKind.BLOWUP
                                   else "scatter-declared"))
                    fate = Fate(kind, {"method": "exit-sign", "t_exit": smp.t, "dQ": smp.dQ})
                    break
            w = detect_scatter(samples, increments, p)
            if w is not None and stop_on_fate:
                events.append((smp.t, "scatter-declared"))
                w["method"] = "window"
                fate = Fate(FateKind.SCATTER, w)
                break
        if tau >= horizon - 1e-12:
            events.append((phys_t(tau), "horizon"))
            break
        amp = st.amp()
        dt = ctl.dt_for(amp)
        dt = min(dt, next_sample - tau, horizon - tau)
        if dt <= 0:
            dt = ctl.dt_for(amp)
        st.step(dt)
        n_steps += 1
        amp = st.amp()
        if amp > ctl.amp_ref or not np.isfinite(amp):
            en = np.sqrt(st.energy_norm_sq()) if np.isfinite(amp) else np.inf
            if not history or n_steps % 10 == 0 or amp >= p.u_max or not np.isfinite(amp):
                history.append((phys_t(st.t), en, amp, (-1 if back else 1) * st.uudot()))
            w = detect_blowup(history, p, ctl.dt_for(amp) if np.isfinite(amp) else 0.0, ctl)
            if w is not None:
                if np.isfinite(amp):
                    record(st.t)
                events.append((phys_t(st.t), "blowup-declared"))
                fate = Fate(FateKind.BLOWUP, w)
                break
        elif history and amp < ctl.amp_ref:
            history.clear()

    if fate is None:
        sig = detect_trapped(samples, p)
        if sig is not None:
            fate = Fate(FateKind.TRAPPED_PLUS if sig > 0 else FateKind.TRAPPED_MINUS,
                        {"residual_dQ_max": max(s.dQ for s in samples
                                                if abs(samples[-1].t - s.t) <= p.T_tail + 1e-9),
                         "horizon_limited": True})
        else:
            fate = Fate(FateKind.UNDETERMINED, {})
    meta = {"n_steps": n_steps, "dt_max": ctl.dt_max, "r_max": g.r_max, "n": g.n,
            "horizon": horizon, "sample_every": sample_every}
    return TrajectoryRecord(samples, events, fate, direction, meta)


def _free_modes(grid: RadialGrid, snap, dt: float):
    W, V, _ = snap
    om = grid.omega
    c, s = np.cos(om * dt), np.sin(om * dt)
    return c * W + (s / om) * V, c * V - om * s * W
