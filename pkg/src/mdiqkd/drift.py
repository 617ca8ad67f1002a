"""Stabilization subsystems: drift processes and feedback controllers.

Timing, polarization and interferometer-phase offsets random-walk with
configurable diffusion constants (assumptions; see the config comments).
Three controllers mirror the hardware loops: a delay-chip correction with
10 ps quantization, a polarization reset triggered by transmitted-power
monitoring, and a periodic phase recalibration.

Coupling into the optical model: a phase offset ``delta`` acts like an
extra misalignment-flip probability ``sin^2(delta/2)`` (shifting the
balanced X-basis error rate by half that amount), polarization loss adds
to the arm attenuation, and a timing offset shrinks the usable
coincidence window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .params import DriftConfig, SystemParams

__all__ = [
    "DriftState",
    "DriftAdjustment",
    "CorrectionAction",
    "DriftTimeline",
    "evolve_drift",
    "apply_feedback",
    "drift_to_params",
    "apply_drift",
    "effective_misalignment",
    "run_drift_timeline",
]


@dataclass(frozen=True)
class DriftState:
    """Instantaneous drift offsets plus controller bookkeeping."""

    timing_offset_ps: float = 0.0
    polarization_transmission: tuple[float, float] = (1.0, 1.0)
    phase_offset_rad: float = 0.0
    time_s: float = 0.0
    last_phase_cal_s: float = 0.0

    def __post_init__(self):
        for t in self.polarization_transmission:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"polarization transmission out of [0,1]: {t}")
        for name in ("timing_offset_ps", "phase_offset_rad", "time_s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


class CorrectionAction(NamedTuple):
    loop: str
    magnitude: float


def evolve_drift(
    state: DriftState, dt: float, rng: np.random.Generator, config: DriftConfig
) -> DriftState:
    """Advance the drift random walks by ``dt`` seconds.

    Polarization is tracked as a misalignment angle reflected into
    [0, pi/2] so the transmission stays in [0, 1]; timing and phase are
    free random walks.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    z = rng.standard_normal(4)
    sq = math.sqrt(dt)
    timing = state.timing_offset_ps + config.sigma_timing_ps * sq * z[0]
    pol = []
    for i, t in enumerate(state.polarization_transmission):
        theta = math.acos(math.sqrt(min(1.0, max(0.0, t))))
        theta = abs(theta + config.sigma_pol_rad * sq * z[1 + i])
        if theta > math.pi / 2:
            theta = math.pi - theta
        pol.append(math.cos(theta) ** 2)
    phase = state.phase_offset_rad + config.sigma_phase_rad * sq * z[3]
    return replace(
        state,
        timing_offset_ps=timing,
        polarization_transmission=(pol[0], pol[1]),
        phase_offset_rad=phase,
        time_s=state.time_s + dt,
    )


def apply_feedback(
    state: DriftState, config: DriftConfig
) -> tuple[DriftState, list[CorrectionAction]]:
    """Run every enabled controller once; returns the corrected state.

    Timing corrections are quantized to the delay-chip resolution, the
    polarization controller re-aligns an arm when its transmission falls
    below threshold, and the phase loop recalibrates to zero once per
    configured interval.
    """
    actions: list[CorrectionAction] = []
    timing = state.timing_offset_ps
    if config.timing_enabled and abs(timing) > config.timing_resolution_ps:
        steps = round(timing / config.timing_resolution_ps)
        correction = steps * config.timing_resolution_ps
        timing -= correction
        actions.append(CorrectionAction("timing", -correction))
    pol = list(state.polarization_transmission)
    if config.polarization_enabled:
        for i, arm in enumerate("ab"):
            if pol[i] < config.polarization_threshold:
                actions.append(CorrectionAction(f"polarization_{arm}", 1.0 - pol[i]))
                pol[i] = 1.0
    phase = state.phase_offset_rad
    last_cal = state.last_phase_cal_s
    if config.phase_enabled and state.time_s - last_cal >= config.phase_interval_s:
        if phase != 0.0:
            actions.append(CorrectionAction("phase", -phase))
        phase = 0.0
        last_cal = state.time_s
    return (
        replace(
            state,
            timing_offset_ps=timing,
            polarization_transmission=(pol[0], pol[1]),
            phase_offset_rad=phase,
            last_phase_cal_s=last_cal,
        ),
        actions,
    )


class DriftAdjustment(NamedTuple):
    """Continuous mapping of a drift state onto channel-parameter changes."""

    misalignment_increment: float          # extra flip probability from phase offset
    loss_increment_db: tuple[float, float]  # per-arm attenuation from polarization
    coincidence_efficiency: float          # window overlap factor from timing offset

    @property
    def x_error_contribution(self) -> float:
        """Shift of the balanced X-basis error rate caused by the phase offset."""
        return 0.5 * self.misalignment_increment


def drift_to_params(state: DriftState, window_ns: float = 1.5) -> DriftAdjustment:
    """Map a drift state to channel adjustments (zero drift maps to identity)."""
    inc = math.sin(state.phase_offset_rad / 2.0) ** 2
    loss = tuple(
        -10.0 * math.log10(max(t, 1e-12)) for t in state.polarization_transmission
    )
    overlap = max(0.0, 1.0 - abs(state.timing_offset_ps) / (window_ns * 1000.0))
    return DriftAdjustment(inc, (loss[0], loss[1]), overlap)


def effective_misalignment(base: float, increment: float) -> float:
    """Compose two independent flip probabilities."""
    return base + increment - 2.0 * base * increment


def apply_drift(params: SystemParams, adj: DriftAdjustment) -> SystemParams:
    """Fold a drift adjustment into a parameter set."""
    ch = params.channel
    det = params.detectors
    channel = replace(
        ch,
        misalignment_x=effective_misalignment(ch.misalignment_x, adj.misalignment_increment),
        loss_db_alice=ch.loss_db_alice + adj.loss_increment_db[0],
        loss_db_bob=ch.loss_db_bob + adj.loss_increment_db[1],
    )
    detectors = replace(
        det,
        efficiency_d0=det.efficiency_d0 * adj.coincidence_efficiency,
        efficiency_d1=det.efficiency_d1 * adj.coincidence_efficiency,
    )
    return replace(params, channel=channel, detectors=detectors)


@dataclass
class DriftTimeline:
    """Sampled drift/feedback run with summary statistics."""

    time_s: np.ndarray
    timing_offset_ps: np.ndarray
    pol_transmission_a: np.ndarray
    pol_transmission_b: np.ndarray
    phase_offset_rad: np.ndarray
    x_misalignment_eff: np.ndarray
    corrections: np.ndarray          # total correction actions applied up to each sample
    summary: dict

    def __len__(self) -> int:
        return len(self.time_s)


def run_drift_timeline(
    params: SystemParams,
    duration_s: float,
    dt: float = 1.0,
    seed: int = 7,
    config: DriftConfig | None = None,
    stride: int = 1,
) -> DriftTimeline:
    """Simulate drift plus feedback over a time span.

    The summary reports the fraction of steps meeting the steady-state
    targets (|timing| < 20 ps, per-arm power fluctuation < 3%,
    phase-induced X-error contribution below its configured bound) and the
    first time the effective X misalignment crosses 5% (None if never).
    """
    if config is None:
        config = params.drift
    n_steps = int(round(duration_s / dt))
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xD21F], dtype=np.uint64)))
    state = DriftState()
    base_mis = params.channel.misalignment_x

    n_samples = n_steps // stride + 1
    cols = {name: np.empty(n_samples) for name in
            ("time_s", "timing", "pol_a", "pol_b", "phase", "mis_eff", "corrections")}
    ok_timing = ok_power = ok_phase = 0
    crossing_s = None
    n_corrections = 0
    sample = 0

    def record(st):
        nonlocal sample
        adj = drift_to_params(st, params.detectors.window_ns)
        cols["time_s"][sample] = st.time_s
        cols["timing"][sample] = st.timing_offset_ps
        cols["pol_a"][sample] = st.polarization_transmission[0]
        cols["pol_b"][sample] = st.polarization_transmission[1]
        cols["phase"][sample] = st.phase_offset_rad
        cols["mis_eff"][sample] = effective_misalignment(base_mis, adj.misalignment_increment)
        cols["corrections"][sample] = n_corrections
        sample += 1

    record(state)
    for i in range(1, n_steps + 1):
        state = evolve_drift(state, dt, rng, config)
        state, actions = apply_feedback(state, config)
        n_corrections += len(actions)
        adj = drift_to_params(state, params.detectors.window_ns)
        mis_eff = effective_misalignment(base_mis, adj.misalignment_increment)
        ok_timing += abs(state.timing_offset_ps) < 20.0
        ok_power += all(1.0 - t < 0.03 for t in state.polarization_transmission)
        ok_phase += adj.x_error_contribution < config.phase_error_bound
        if crossing_s is None and mis_eff > 0.05:
            crossing_s = state.time_s
        if i % stride == 0:
            record(state)

    summary = {
        "steps": n_steps,
        "dt_s": dt,
        "frac_timing_within_20ps": ok_timing / n_steps if n_steps else 1.0,
        "frac_power_within_3pct": ok_power / n_steps if n_steps else 1.0,
        "frac_phase_within_bound": ok_phase / n_steps if n_steps else 1.0,
        "x_misalignment_crossing_s": crossing_s,
        "corrections_applied": n_corrections,
    }
    return DriftTimeline(
        time_s=cols["time_s"][:sample],
        timing_offset_ps=cols["timing"][:sample],
        pol_transmission_a=cols["pol_a"][:sample],
        pol_transmission_b=cols["pol_b"][:sample],
        phase_offset_rad=cols["phase"][:sample],
        x_misalignment_eff=cols["mis_eff"][:sample],
        corrections=cols["corrections"][:sample],
        summary=summary,
    )
