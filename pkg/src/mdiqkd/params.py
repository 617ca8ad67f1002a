"""Experiment configuration: sources, channel, detectors, clock.

All parameter records are immutable dataclasses validated on construction.
A bundled preset ``paper-200km`` encodes a symmetric 200 km laboratory
scenario (75 MHz clock, SNSPD pair, vacuum+weak decoy intensities) and is
the default starting point for every command-line workflow.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, replace
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "SourceParams",
    "ChannelParams",
    "DetectorParams",
    "SystemParams",
    "DriftConfig",
    "load_config",
    "load_preset",
    "paper_200km",
    "PRESET_NAMES",
]

_PROB_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid or inconsistent configuration values."""


@dataclass(frozen=True)
class SourceParams:
    """Decoy-state source: three intensities with selection probabilities.

    ``intensity_vacuum`` is pinned to exactly 0; ``basis_prob_z`` is the
    probability of encoding in the time-bin (Z) basis rather than the
    phase (X) basis.
    """

    intensity_signal: float = 0.4
    intensity_decoy: float = 0.07
    intensity_vacuum: float = 0.0
    prob_signal: float = 0.33
    prob_decoy: float = 0.45
    prob_vacuum: float = 0.22
    basis_prob_z: float = 0.5

    def __post_init__(self):
        if self.intensity_vacuum != 0.0:
            raise ConfigError("intensity_vacuum must be exactly 0")
        if not 0.0 <= self.intensity_decoy < self.intensity_signal:
            raise ConfigError(
                f"need 0 <= nu < mu, got nu={self.intensity_decoy} mu={self.intensity_signal}"
            )
        probs = (self.prob_signal, self.prob_decoy, self.prob_vacuum)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError(f"intensity probabilities out of [0,1]: {probs}")
        if abs(sum(probs) - 1.0) > _PROB_TOL:
            raise ConfigError(f"intensity probabilities must sum to 1, got {sum(probs)!r}")
        if not 0.0 <= self.basis_prob_z <= 1.0:
            raise ConfigError(f"basis_prob_z out of [0,1]: {self.basis_prob_z}")

    @property
    def intensities(self) -> tuple[float, float, float]:
        """(signal, decoy, vacuum) mean photon numbers."""
        return (self.intensity_signal, self.intensity_decoy, self.intensity_vacuum)

    @property
    def class_probs(self) -> tuple[float, float, float]:
        return (self.prob_signal, self.prob_decoy, self.prob_vacuum)


@dataclass(frozen=True)
class ChannelParams:
    """Two fiber arms meeting at the measurement site.

    ``misalignment_x`` is the probability of an effective phase flip of one
    arm's encoded qubit per slot (collapses interferometer drift, mode
    mismatch, etc. into one scalar).  ``extinction_ratio_db`` sets the
    intensity leakage of Z-basis pulses into the wrong time bin.
    """

    loss_db_alice: float = 19.8
    loss_db_bob: float = 19.8
    insertion_loss_db: float = 1.0
    misalignment_x: float = 0.015
    extinction_ratio_db: float = 40.0

    def __post_init__(self):
        for name in ("loss_db_alice", "loss_db_bob", "insertion_loss_db"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.misalignment_x <= 0.5:
            raise ConfigError(f"misalignment_x out of [0,0.5]: {self.misalignment_x}")
        if not self.extinction_ratio_db > 0:
            raise ConfigError("extinction_ratio_db must be > 0")

    @property
    def leak_fraction(self) -> float:
        """Z-basis intensity fraction leaking into the wrong time bin."""
        return 10.0 ** (-self.extinction_ratio_db / 10.0)


@dataclass(frozen=True)
class DetectorParams:
    """Two single-photon detectors behind the interference beam splitter."""

    efficiency_d0: float = 0.46
    efficiency_d1: float = 0.40
    dark_rate_hz: float = 10.0
    window_ns: float = 1.5

    def __post_init__(self):
        for name in ("efficiency_d0", "efficiency_d1"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} out of [0,1]")
        if self.dark_rate_hz < 0:
            raise ConfigError("dark_rate_hz must be >= 0")
        if self.window_ns <= 0:
            raise ConfigError("window_ns must be > 0")
        if not 0.0 <= self.dark_prob_per_window < 1.0:
            raise ConfigError("dark probability per window must lie in [0,1)")

    @property
    def dark_prob_per_window(self) -> float:
        """Dark-count probability per detector per gated time-bin window."""
        return self.dark_rate_hz * self.window_ns * 1e-9


@dataclass(frozen=True)
class DriftConfig:
    """Stochastic drift strengths and feedback-loop settings.

    The diffusion constants are assumptions (no measured drift spectra);
    they are calibrated so that an uncompensated system degrades on a
    minutes-to-hours timescale.
    """

    sigma_timing_ps: float = 2.0       # timing random walk, ps per sqrt(s); assumed
    sigma_pol_rad: float = 0.003       # polarization angle walk, rad per sqrt(s); assumed
    sigma_phase_rad: float = 0.015     # interferometer phase walk, rad per sqrt(s); assumed
    timing_enabled: bool = True
    polarization_enabled: bool = True
    phase_enabled: bool = True
    timing_resolution_ps: float = 10.0
    polarization_threshold: float = 0.98
    phase_interval_s: float = 60.0
    phase_error_bound: float = 0.01

    def __post_init__(self):
        if self.timing_resolution_ps <= 0:
            raise ConfigError("timing_resolution_ps must be > 0")
        for name in ("sigma_timing_ps", "sigma_pol_rad", "sigma_phase_rad"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.polarization_threshold <= 1.0:
            raise ConfigError("polarization_threshold must lie in (0,1]")
        if self.phase_interval_s <= 0:
            raise ConfigError("phase_interval_s must be > 0")


@dataclass(frozen=True)
class SystemParams:
    """Full experiment configuration for one link."""

    source_alice: SourceParams = field(default_factory=SourceParams)
    source_bob: SourceParams = field(default_factory=SourceParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    detectors: DetectorParams = field(default_factory=DetectorParams)
    clock_hz: float = 75e6
    ec_efficiency_f: float = 1.16
    drift: DriftConfig = field(default_factory=DriftConfig)

    def __post_init__(self):
        if not self.clock_hz > 0:
            raise ConfigError("clock_hz must be > 0")
        if not self.ec_efficiency_f >= 1.0:
            raise ConfigError("ec_efficiency_f must be >= 1")

    def with_total_loss_db(self, total_db: float) -> "SystemParams":
        """Split a total channel loss symmetrically over the two arms."""
        if total_db < 0:
            raise ConfigError("total loss must be >= 0")
        channel = replace(self.channel, loss_db_alice=total_db / 2.0, loss_db_bob=total_db / 2.0)
        return replace(self, channel=channel)

    @property
    def total_loss_db(self) -> float:
        return self.channel.loss_db_alice + self.channel.loss_db_bob

    @property
    def selection_prob_key(self) -> float:
        """Probability a slot is a signal-signal pair with both in Z."""
        return (
            self.source_alice.prob_signal
            * self.source_bob.prob_signal
            * self.source_alice.basis_prob_z
            * self.source_bob.basis_prob_z
        )


def _build_source(section: dict) -> SourceParams:
    return SourceParams(**section)


_SECTION_BUILDERS = {
    "channel": ChannelParams,
    "detectors": DetectorParams,
    "drift": DriftConfig,
}


def params_from_dict(raw: dict) -> SystemParams:
    """Assemble SystemParams from a nested config mapping."""
    raw = dict(raw)
    kwargs = {}
    source = raw.pop("source", {})
    if source:
        shared = {k: v for k, v in source.items() if not isinstance(v, dict)}
        kwargs["source_alice"] = _build_source({**shared, **source.get("alice", {})})
        kwargs["source_bob"] = _build_source({**shared, **source.get("bob", {})})
    for key, builder in _SECTION_BUILDERS.items():
        section = raw.pop(key, None)
        if section is not None:
            try:
                kwargs[key] = builder(**section)
            except TypeError as exc:
                raise ConfigError(f"bad [{key}] section: {exc}") from None
    system = raw.pop("system", {})
    unknown = set(raw) | {k for k in system if k not in ("clock_hz", "ec_efficiency_f")}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return SystemParams(**kwargs, **system)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> SystemParams:
    """Load SystemParams from a TOML config file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return params_from_dict(raw)


PRESET_NAMES = ("paper-200km",)


def load_preset(name: str = "paper-200km") -> SystemParams:
    """Load a bundled preset by name."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; available: {PRESET_NAMES}")
    ref = resources.files("mdiqkd").joinpath("data").joinpath(f"{name}.toml")
    with ref.open("rb") as fh:
        return params_from_dict(tomllib.load(fh))


def paper_200km() -> SystemParams:
    """The bundled symmetric 200 km reference configuration."""
    return load_preset("paper-200km")


def asdict_flat(params: SystemParams) -> dict:
    """Flatten params into dotted keys (for manifests and reports)."""
    out = {}

    def walk(prefix, obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(f"{prefix}{f.name}.", value)
            else:
                out[f"{prefix}{f.name}"] = value

    walk("", params)
    return out
