"""Experiment configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .metrics import G_SSS_DEFAULT, MODES
from .probe import PulseTrainConfig
from .spin import DecoherenceParams


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a Monte Carlo run.

    Times are seconds.  The probe starts at ``t_e - window`` and runs to
    ``t_e + window``; the first window (M1) precedes ``t_e``, the second
    (M2) follows it.
    """

    n_atoms: float = 1.75e6
    trials: int = 450
    window: float = 270e-6
    t_e: float = 270e-6
    master_seed: int = 0
    pulse: PulseTrainConfig = field(default_factory=PulseTrainConfig)
    mode: str = "raw"
    sss_g: float = G_SSS_DEFAULT
    n_atoms_jitter: float = 0.0
    larmor_jitter: float = 0.0
    scan_n_atoms: tuple[float, ...] = ()
    scan_window: tuple[float, ...] = ()

    def __post_init__(self):
        if self.trials < 2:
            raise ConfigError(f"trials must be >= 2, got {self.trials}")
        if self.n_atoms < 0:
            raise ConfigError(f"n_atoms must be >= 0, got {self.n_atoms}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.t_e - self.window < -1e-12:
            raise ConfigError("t_e must be >= window (probing starts at t_e - window)")
        _check_window(self.window, self.pulse.pulse_period)
        for w in self.scan_window:
            _check_window(w, self.pulse.pulse_period)
        if self.master_seed < 0:
            raise ConfigError(f"master_seed must be >= 0, got {self.master_seed}")
        if self.n_atoms_jitter < 0 or self.larmor_jitter < 0:
            raise ConfigError("jitter magnitudes must be >= 0")

    @property
    def deco(self) -> DecoherenceParams:
        return self.pulse.deco

    @property
    def p_return(self) -> float:
        return self.pulse.deco.p_return

    @property
    def t_start(self) -> float:
        return self.t_e - self.window

    @property
    def pulses_per_window(self) -> int:
        return int(round(self.window / self.pulse.pulse_period))

    @property
    def eta_sc(self) -> float:
        """Scattering survival of the coherence at ``t_e`` (after M1)."""
        p = self.pulse
        return math.exp(-p.deco.eta_per_photon * self.pulses_per_window * (p.n_photons_v + p.n_photons_h))

    @property
    def probe_photons(self) -> float:
        """V-polarised photons sent during one window."""
        return self.pulses_per_window * self.pulse.n_photons_v


def _check_window(window, period):
    k = window / period
    if not window > 0 or abs(k - round(k)) > 1e-6 or round(k) < 1:
        raise ConfigError(f"window {window:.6g} s is not a positive multiple of the pulse period")


# key -> (section, attribute, to_internal, to_file)
_US = (lambda v: v * 1e-6, lambda v: v * 1e6)
_KHZ = (lambda v: 2 * math.pi * v * 1e3, lambda v: v / (2 * math.pi * 1e3))
_ID = (lambda v: v, lambda v: v)

_FLOAT_KEYS = {
    "n_atoms": ("exp", "n_atoms", _ID),
    "window_us": ("exp", "window", _US),
    "t_e_us": ("exp", "t_e", _US),
    "sss_g_rad_per_spin": ("exp", "sss_g", _ID),
    "n_atoms_jitter": ("exp", "n_atoms_jitter", _ID),
    "larmor_jitter_khz": ("exp", "larmor_jitter", _KHZ),
    "pulse_period_us": ("pulse", "pulse_period", _US),
    "pulse_duration_us": ("pulse", "pulse_duration", _US),
    "n_photons_v": ("pulse", "n_photons_v", _ID),
    "n_photons_h": ("pulse", "n_photons_h", _ID),
    "g_rad_per_spin": ("pulse", "g", _ID),
    "larmor_khz": ("pulse", "larmor_omega", _KHZ),
    "t2_us": ("pulse", "t2", _US),
    "phi0_rad": ("pulse", "phi0", _ID),
    "dephasing_span_us": ("pulse", "dephasing_span", _US),
    "eta_per_photon": ("deco", "eta_per_photon", _ID),
    "eta_dec": ("deco", "eta_dec", _ID),
    "p_return": ("deco", "p_return", _ID),
}
_INT_KEYS = {"trials": ("exp", "trials"), "master_seed": ("exp", "master_seed")}
_BOOL_KEYS = {"noiseless": ("pulse", "noiseless"), "poisson_photons": ("pulse", "poisson_photons")}
_LIST_KEYS = {"scan_n_atoms": ("scan_n_atoms", _ID), "scan_window_us": ("scan_window", _US)}
_MODE_ALIASES = {"raw": "raw", "subtracted": "readout_subtracted", "readout_subtracted": "readout_subtracted"}

KEYS = tuple(_FLOAT_KEYS) + tuple(_INT_KEYS) + tuple(_BOOL_KEYS) + tuple(_LIST_KEYS) + ("mode",)


def parse_mode(text: str) -> str:
    try:
        return _MODE_ALIASES[text.strip()]
    except KeyError:
        raise ConfigError(f"unknown mode {text!r}; use raw or subtracted") from None


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def config_from_mapping(values: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from string values keyed by file keys."""
    base = base or ExperimentConfig()
    exp, pulse, deco = {}, {}, {}
    sections = {"exp": exp, "pulse": pulse, "deco": deco}
    for key, text in values.items():
        try:
            if key in _FLOAT_KEYS:
                sec, attr, (to_int, _) = _FLOAT_KEYS[key]
                v = float(text)
                if not math.isfinite(v):
                    raise ValueError("must be finite")
                sections[sec][attr] = to_int(v)
            elif key in _INT_KEYS:
                sec, attr = _INT_KEYS[key]
                sections[sec][attr] = int(text)
            elif key in _BOOL_KEYS:
                sec, attr = _BOOL_KEYS[key]
                sections[sec][attr] = _parse_bool(text)
            elif key in _LIST_KEYS:
                attr, (to_int, _) = _LIST_KEYS[key]
                items = [s for s in text.replace(",", " ").split() if s]
                exp[attr] = tuple(to_int(float(s)) for s in items)
            elif key == "mode":
                exp["mode"] = parse_mode(text)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
    try:
        new_deco = replace(base.pulse.deco, **deco)
        new_pulse = replace(base.pulse, deco=new_deco, **pulse)
        return replace(base, pulse=new_pulse, **exp)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    try:
        return config_from_mapping(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return f"{v:.12g}"


def dump_config(cfg: ExperimentConfig) -> str:
    """Resolved config with every default expanded, in file units."""
    sections = {"exp": cfg, "pulse": cfg.pulse, "deco": cfg.pulse.deco}
    lines = []
    for key, (sec, attr, (_, to_file)) in _FLOAT_KEYS.items():
        lines.append(f"{key} = {_fmt(to_file(getattr(sections[sec], attr)))}")
    for key, (sec, attr) in _INT_KEYS.items():
        lines.append(f"{key} = {getattr(sections[sec], attr)}")
    for key, (sec, attr) in _BOOL_KEYS.items():
        lines.append(f"{key} = {_fmt(getattr(sections[sec], attr))}")
    for key, (attr, (_, to_file)) in _LIST_KEYS.items():
        lines.append(f"{key} = " + ", ".join(_fmt(to_file(v)) for v in getattr(cfg, attr)))
    lines.append(f"mode = {cfg.mode}")
    return "\n".join(lines) + "\n"
