"""Pulse-level stochastic simulation of the optical layer.

One slot = one pulse pair.  The sampler draws intensity class, basis and
bit for each party, a uniform relative laser phase, a misalignment flip,
and then Bernoulli clicks per detector/time-bin window with the same
coherent-field probabilities the analytic table integrates — so tallies
converge to :func:`mdiqkd.model.analytic_gain_table` cell by cell.

Randomness is counter-based: slots are grouped into fixed-size shards and
each shard owns a Philox stream keyed by ``(seed, shard_index)``.  Results
are therefore bit-identical for any worker count, and disjoint seeds give
independent streams.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterator, NamedTuple

import numpy as np

from .model import BASES, CLASSES, arm_transmittances, effective_efficiencies, encoding_amplitudes
from .params import SystemParams

__all__ = [
    "SHARD_SLOTS",
    "PulseChoice",
    "DetectionEvent",
    "BsmResult",
    "TallyMatrix",
    "SlotBatch",
    "sample_photons",
    "bsm_coincidence",
    "simulate_slots",
    "iter_shards",
    "sample_shard",
    "tally_from_batch",
    "write_tally_csv",
    "read_tally_csv",
    "cell_name",
    "force_classes",
]

SHARD_SLOTS = 1 << 18
_UNIFORMS_PER_SLOT = 12

TALLY_CSV_HEADER = ("intensity_a", "intensity_b", "basis", "sent", "success", "error")


class Detector(IntEnum):
    D0 = 0
    D1 = 1


class PulseChoice(NamedTuple):
    """One transmitter's choice for a slot (class/basis/bit indices)."""

    intensity_class: int  # 0 signal, 1 decoy, 2 vacuum
    basis: int            # 0 Z, 1 X
    bit: int

    @property
    def class_name(self) -> str:
        return CLASSES[self.intensity_class]

    @property
    def basis_name(self) -> str:
        return BASES[self.basis]


class DetectionEvent(NamedTuple):
    slot_index: int
    detector: int
    time_bin: int


class BsmResult(NamedTuple):
    success: bool
    bell_state: str | None   # "psi_minus" on success
    pattern: int | None      # 0: D0@bin0 with D1@bin1, 1: the mirror


def sample_photons(intensity: float, rng: np.random.Generator, size=None):
    """Poisson photon-number draw(s) for a phase-randomized pulse."""
    if intensity < 0:
        raise ValueError(f"intensity must be >= 0, got {intensity}")
    return rng.poisson(intensity, size=size)


def bsm_coincidence(events) -> BsmResult:
    """Apply the post-selection rule to one slot's detection events.

    Success requires the two detectors to fire in opposite time bins and
    nothing else; every other pattern (single events, one detector in both
    bins, all four windows) is discarded.  Duplicate events in the same
    window are rejected as malformed input.
    """
    clicks = np.zeros((2, 2), dtype=bool)
    for ev in events:
        det, tb = int(ev.detector), int(ev.time_bin)
        if det not in (0, 1) or tb not in (0, 1):
            raise ValueError(f"malformed detection event {ev}")
        if clicks[det, tb]:
            raise ValueError(f"duplicate event in window (detector {det}, bin {tb})")
        clicks[det, tb] = True
    if clicks[0, 0] and clicks[1, 1] and not clicks[0, 1] and not clicks[1, 0]:
        return BsmResult(True, "psi_minus", 0)
    if clicks[0, 1] and clicks[1, 0] and not clicks[0, 0] and not clicks[1, 1]:
        return BsmResult(True, "psi_minus", 1)
    return BsmResult(False, None, None)


@dataclass
class TallyMatrix:
    """Counts per (alice class, bob class, basis): sent, success, error.

    Only matched-basis slots are tallied; ``error`` counts successes whose
    bits violate the expected anti-correlation.
    """

    sent: np.ndarray
    success: np.ndarray
    error: np.ndarray
    num_slots: int = 0

    @classmethod
    def zeros(cls) -> "TallyMatrix":
        shape = (3, 3, 2)
        return cls(
            sent=np.zeros(shape, dtype=np.int64),
            success=np.zeros(shape, dtype=np.int64),
            error=np.zeros(shape, dtype=np.int64),
        )

    def merge(self, other: "TallyMatrix") -> "TallyMatrix":
        return TallyMatrix(
            sent=self.sent + other.sent,
            success=self.success + other.success,
            error=self.error + other.error,
            num_slots=self.num_slots + other.num_slots,
        )

    def validate(self):
        if np.any(self.error > self.success) or np.any(self.success > self.sent):
            raise ValueError("tally invariant violated: need error <= success <= sent")
        if np.any(self.sent < 0):
            raise ValueError("negative tally counts")

    def scaled(self, factor: float) -> "TallyMatrix":
        """Same frequencies with all counts scaled (for finite-size studies)."""
        return TallyMatrix(
            sent=np.round(self.sent * factor).astype(np.int64),
            success=np.round(self.success * factor).astype(np.int64),
            error=np.round(self.error * factor).astype(np.int64),
            num_slots=int(round(self.num_slots * factor)),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TallyMatrix):
            return NotImplemented
        return (
            self.num_slots == other.num_slots
            and np.array_equal(self.sent, other.sent)
            and np.array_equal(self.success, other.success)
            and np.array_equal(self.error, other.error)
        )


def cell_name(ia: int, ib: int, basis: int) -> str:
    return f"({CLASSES[ia]}, {CLASSES[ib]}, {BASES[basis]})"


@dataclass
class SlotBatch:
    """One shard's worth of slot-level outcomes.

    Charlie-visible data is the click array only; pulse choices belong to
    the transmitters.  The relative phase and flip draws are internal to
    the channel and deliberately not exposed.
    """

    start: int
    a_class: np.ndarray
    a_basis: np.ndarray
    a_bit: np.ndarray
    b_class: np.ndarray
    b_basis: np.ndarray
    b_bit: np.ndarray
    clicks: np.ndarray           # (n, 4) bool: (D0,bin0) (D0,bin1) (D1,bin0) (D1,bin1)
    success: np.ndarray          # (n,) bool
    pattern: np.ndarray          # (n,) int8, -1 unless success

    def __len__(self) -> int:
        return len(self.success)


def _shard_generator(seed: int, shard_index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(shard_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_shard(params: SystemParams, shard_index: int, n_slots: int, seed: int) -> SlotBatch:
    """Deterministically sample one shard of slots."""
    rng = _shard_generator(seed, shard_index)
    u = rng.random((n_slots, _UNIFORMS_PER_SLOT))

    src_a, src_b = params.source_alice, params.source_bob
    tau_a, tau_b = arm_transmittances(params)
    eta = effective_efficiencies(params)
    d = params.detectors.dark_prob_per_window
    leak = params.channel.leak_fraction
    mis = params.channel.misalignment_x

    def choices(u_class, u_basis, u_bit, src):
        cls = (u_class >= src.prob_signal).astype(np.int8)
        cls += (u_class >= src.prob_signal + src.prob_decoy).astype(np.int8)
        basis = (u_basis >= src.basis_prob_z).astype(np.int8)
        bit = (u_bit >= 0.5).astype(np.int8)
        return cls, basis, bit

    a_class, a_basis, a_bit = choices(u[:, 0], u[:, 1], u[:, 2], src_a)
    b_class, b_basis, b_bit = choices(u[:, 3], u[:, 4], u[:, 5], src_b)

    ints_a = np.asarray(src_a.intensities)[a_class]
    ints_b = np.asarray(src_b.intensities)[b_class]

    ua0, ua1 = encoding_amplitudes(a_basis, a_bit, leak)
    vb0, vb1 = encoding_amplitudes(b_basis, b_bit, leak)
    flip = np.where(u[:, 7] < mis, -1.0, 1.0)

    amp_a0 = np.sqrt(ints_a * tau_a) * ua0
    amp_a1 = np.sqrt(ints_a * tau_a) * ua1
    amp_b0 = np.sqrt(ints_b * tau_b) * vb0
    amp_b1 = np.sqrt(ints_b * tau_b) * vb1 * flip

    cos_phi = np.cos(2.0 * np.pi * u[:, 6])
    clicks = np.empty((n_slots, 4), dtype=bool)
    col = 0
    for k, sign in ((0, 1.0), (1, -1.0)):
        for amp_a, amp_b in ((amp_a0, amp_b0), (amp_a1, amp_b1)):
            inten = 0.5 * eta[k] * (amp_a**2 + amp_b**2 + 2.0 * sign * amp_a * amp_b * cos_phi)
            p_click = 1.0 - (1.0 - d) * np.exp(-inten)
            clicks[:, col] = u[:, 8 + col] < p_click
            col += 1

    pat_a = clicks[:, 0] & ~clicks[:, 1] & ~clicks[:, 2] & clicks[:, 3]
    pat_b = ~clicks[:, 0] & clicks[:, 1] & clicks[:, 2] & ~clicks[:, 3]
    success = pat_a | pat_b
    pattern = np.full(n_slots, -1, dtype=np.int8)
    pattern[pat_a] = 0
    pattern[pat_b] = 1

    return SlotBatch(
        start=shard_index * SHARD_SLOTS,
        a_class=a_class, a_basis=a_basis, a_bit=a_bit,
        b_class=b_class, b_basis=b_basis, b_bit=b_bit,
        clicks=clicks, success=success, pattern=pattern,
    )


def tally_from_batch(batch: SlotBatch, tally: TallyMatrix) -> TallyMatrix:
    """Accumulate a batch into a tally (matched-basis slots only)."""
    matched = batch.a_basis == batch.b_basis
    cell = (batch.a_class.astype(np.int64) * 3 + batch.b_class) * 2 + batch.a_basis
    counts = np.bincount(cell[matched], minlength=18)
    tally.sent += counts.reshape(3, 3, 2)
    succ = matched & batch.success
    tally.success += np.bincount(cell[succ], minlength=18).reshape(3, 3, 2)
    err = succ & (batch.a_bit == batch.b_bit)
    tally.error += np.bincount(cell[err], minlength=18).reshape(3, 3, 2)
    tally.num_slots += len(batch)
    return tally


def _shard_plan(num_slots: int) -> list[tuple[int, int]]:
    plan = []
    full, rem = divmod(num_slots, SHARD_SLOTS)
    for i in range(full):
        plan.append((i, SHARD_SLOTS))
    if rem:
        plan.append((full, rem))
    return plan


def iter_shards(params: SystemParams, num_slots: int, seed: int) -> Iterator[SlotBatch]:
    """Stream slot batches shard by shard (constant memory)."""
    for shard_index, count in _shard_plan(num_slots):
        yield sample_shard(params, shard_index, count, seed)


def _tally_shard_range(args) -> TallyMatrix:
    params, seed, shards = args
    tally = TallyMatrix.zeros()
    for shard_index, count in shards:
        tally_from_batch(sample_shard(params, shard_index, count, seed), tally)
    return tally


def simulate_slots(
    params: SystemParams, num_slots: int, seed: int, workers: int = 1
) -> TallyMatrix:
    """Run the optical layer for ``num_slots`` pulse pairs and tally.

    Deterministic for fixed ``(params, num_slots, seed)`` regardless of
    ``workers``: shards are keyed by absolute index and merged by integer
    summation.
    """
    if num_slots < 1:
        raise ValueError("num_slots must be >= 1")
    plan = _shard_plan(num_slots)
    if workers <= 1 or len(plan) == 1:
        return _tally_shard_range((params, seed, plan))
    chunks = [plan[i::workers] for i in range(workers)]
    tally = TallyMatrix.zeros()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_tally_shard_range, [(params, seed, c) for c in chunks]):
            tally = tally.merge(part)
    return tally


def force_classes(params: SystemParams, cls: str = "signal", basis: str = "Z") -> SystemParams:
    """Pin both sources to one intensity class and basis (for targeted runs)."""
    CLASSES.index(cls)
    BASES.index(basis)
    probs = {"prob_signal": 0.0, "prob_decoy": 0.0, "prob_vacuum": 0.0}
    probs[f"prob_{cls}"] = 1.0
    pz = 1.0 if basis == "Z" else 0.0
    new_a = replace(params.source_alice, **probs, basis_prob_z=pz)
    new_b = replace(params.source_bob, **probs, basis_prob_z=pz)
    return replace(params, source_alice=new_a, source_bob=new_b)


def write_tally_csv(tally: TallyMatrix, path):
    """Serialize a tally as CSV (one row per intensity pair and basis)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TALLY_CSV_HEADER)
        for ia in range(3):
            for ib in range(3):
                for basis in range(2):
                    writer.writerow([
                        CLASSES[ia], CLASSES[ib], BASES[basis],
                        int(tally.sent[ia, ib, basis]),
                        int(tally.success[ia, ib, basis]),
                        int(tally.error[ia, ib, basis]),
                    ])


def read_tally_csv(path) -> TallyMatrix:
    tally = TallyMatrix.zeros()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TALLY_CSV_HEADER:
            raise ValueError(f"unexpected tally header {header}")
        for row in reader:
            ia = CLASSES.index(row[0])
            ib = CLASSES.index(row[1])
            basis = BASES.index(row[2])
            tally.sent[ia, ib, basis] = int(row[3])
            tally.success[ia, ib, basis] = int(row[4])
            tally.error[ia, ib, basis] = int(row[5])
    tally.num_slots = int(tally.sent.sum())
    tally.validate()
    return tally
