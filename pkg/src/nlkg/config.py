"""Run configuration: JSON in, validated dataclasses out, resolved JSON echoed back."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .evolution import StepControl
from .functionals import ThresholdError, ThresholdParams


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    r_max: float = 60.0
    n: int = 6144


@dataclass
class IntegratorConfig:
    dt_max: float = 1e-3
    dt_min: float = 1e-13
    u_max: float = 1e6
    amp_ref: float = 5.0
    amp_switch: float = 10.0
    center_frac: float = 0.1


@dataclass
class HorizonConfig:
    T: float = 40.0
    T_win: float = 4.0
    T_tail: float = 1.0
    sample_every: float = 0.05


@dataclass
class ThresholdConfig:
    delta_E: Optional[float] = None
    delta_X: Optional[float] = None
    delta_S: Optional[float] = None
    delta_star: Optional[float] = None
    eps_star: Optional[float] = None
    R_star: Optional[float] = None
    C_star: float = 1.0
    eta_scat: float = 0.05
    mu: float = 1.0


@dataclass
class ExperimentConfig:
    name: Optional[str] = None
    params: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    horizons: HorizonConfig = field(default_factory=HorizonConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output_dir: str = "nlkg-out"
    cache: Optional[str] = None
    seed: int = 0

    def params(self) -> ThresholdParams:
        """Threshold parameters; raises ``ConfigError`` on a violated relation."""
        kw = {k: v for k, v in asdict(self.thresholds).items() if v is not None}
        kw.update(u_max=self.integrator.u_max, T_win=self.horizons.T_win,
                  T_tail=self.horizons.T_tail)
        try:
            return ThresholdParams(**kw)
        except ThresholdError as e:
            raise ConfigError(f"thresholds: {e}") from None

    def step_control(self) -> StepControl:
        i = self.integrator
        return StepControl(dt_max=i.dt_max, dt_min=i.dt_min, amp_ref=i.amp_ref,
                           amp_switch=i.amp_switch, center_frac=i.center_frac)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolved_thresholds"] = self.params().to_dict()
        return d

    def validate(self) -> "RunConfig":
        g = self.grid
        if not (g.r_max > 0 and g.n >= 16):
            raise ConfigError("grid: need r_max > 0 and n >= 16")
        for sec in (self.integrator, self.horizons):
            for f in fields(sec):
                v = getattr(sec, f.name)
                if not v > 0:
                    raise ConfigError(f"{type(sec).__name__}.{f.name}: must be positive, got {v}")
        if self.integrator.dt_min >= self.integrator.dt_max:
            raise ConfigError("integrator: dt_min must be below dt_max")
        self.params()
        return self


_SECTIONS = {"grid": GridConfig, "integrator": IntegratorConfig, "thresholds": ThresholdConfig,
             "horizons": HorizonConfig, "experiment": ExperimentConfig}
_TOP = {"output_dir": str, "cache": (str, type(None)), "seed": int}


def _coerce(where: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    out = {}
    for k, v in raw.items():
        if k not in known:
            raise ConfigError(f"{where}.{k}: unknown field")
        default = getattr(cls(), k)
        if isinstance(default, bool) or isinstance(v, bool):
            raise ConfigError(f"{where}.{k}: booleans are not accepted")
        if isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(v, int):
                raise ConfigError(f"{where}.{k}: expected an integer, got {v!r}")
        elif isinstance(default, float) or (default is None and k not in ("name",)):
            if v is not None and not isinstance(v, (int, float)):
                raise ConfigError(f"{where}.{k}: expected a number, got {v!r}")
            v = None if v is None else float(v)
        elif k == "name" and v is not None and not isinstance(v, str):
            raise ConfigError(f"{where}.{k}: expected a string")
        elif k == "params" and not isinstance(v, dict):
            raise ConfigError(f"{where}.{k}: expected an object")
        out[k] = v
    return cls(**out)


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    kw = {}
    for k, v in d.items():
        if k == "resolved_thresholds":
            continue
        if k in _SECTIONS:
            kw[k] = _coerce(k, _SECTIONS[k], v)
        elif k in _TOP:
            if isinstance(v, bool) or not isinstance(v, _TOP[k]):
                raise ConfigError(f"{k}: wrong type {type(v).__name__}")
            kw[k] = v
        else:
            raise ConfigError(f"{k}: unknown field")
    return RunConfig(**kw).validate()


def load_config(path: Optional[str]) -> RunConfig:
    """Load and validate a JSON config; ``None`` or an empty file gives the defaults."""
    if path is None:
        return RunConfig().validate()
    text = Path(path).read_text()
    if not text.strip():
        return RunConfig().validate()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return config_from_dict(d)


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, shortest round-trip floats)."""
    from .evolution import _json_default
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def write_resolved(cfg: RunConfig, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = d / "resolved-config.json"
    p.write_text(dumps(cfg.to_dict()))
    return p
