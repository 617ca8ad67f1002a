"""Three-party protocol engine: Alice, Bob and an untrusted relay.

The parties are sequential actors wired by in-process FIFO channels.  The
relay (Charlie) sees detector clicks only — never pulse choices — and
announces which slots produced a valid opposite-bin coincidence.  Alice
and Bob then sift: matched-basis signal-signal Z slots become key
material (Bob flips his bits to undo the anti-correlation of the
post-selected Bell state), every other matched-basis success feeds the
decoy estimation tallies, and mismatched-basis successes are discarded.

Announcements are per-slot logical records carried in per-shard batches;
an optional line-delimited transcript (format ``v1``) records them for
debugging.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from .decoy import InsufficientDataError, KeyRateReport, finite_key_pipeline
from .montecarlo import (
    SlotBatch,
    TallyMatrix,
    iter_shards,
    tally_from_batch,
)
from .params import SystemParams

__all__ = [
    "Phase",
    "Party",
    "Announcement",
    "SiftedKey",
    "SiftResult",
    "SessionResult",
    "ProtocolError",
    "ChannelClosedError",
    "MessageChannel",
    "message_channel",
    "sift",
    "run_session",
]

TRANSCRIPT_VERSION = 1


class ProtocolError(RuntimeError):
    """Protocol-level inconsistency (possible tampering)."""


class ChannelClosedError(RuntimeError):
    """Send or receive on a closed channel."""


class Phase(Enum):
    TRANSMITTING = 1
    AWAITING_ANNOUNCEMENTS = 2
    SIFTING = 3
    ESTIMATING = 4
    DONE = 5


class Announcement(NamedTuple):
    slot_index: int
    success: bool
    bell_state_tag: str


class _Endpoint:
    def __init__(self, channel: "MessageChannel", inbox: deque, outbox: deque):
        self._channel = channel
        self._inbox = inbox
        self._outbox = outbox

    def send(self, message):
        if self._channel.closed:
            raise ChannelClosedError("send on closed channel")
        self._outbox.append(message)

    def recv(self):
        if not self._inbox:
            if self._channel.closed:
                raise ChannelClosedError("receive on closed, drained channel")
            raise ProtocolError("no message pending")
        return self._inbox.popleft()

    def pending(self) -> int:
        return len(self._inbox)


class MessageChannel:
    """Ordered, reliable, in-process duplex channel between two roles."""

    def __init__(self, role_a: str, role_b: str):
        self.roles = (role_a, role_b)
        self._ab: deque = deque()
        self._ba: deque = deque()
        self.closed = False

    def endpoint(self, role: str) -> _Endpoint:
        if role == self.roles[0]:
            return _Endpoint(self, self._ba, self._ab)
        if role == self.roles[1]:
            return _Endpoint(self, self._ab, self._ba)
        raise ValueError(f"role {role!r} not on this channel {self.roles}")

    def close(self):
        self.closed = True


def message_channel(sender: str, receiver: str) -> MessageChannel:
    """Create the duplex channel connecting two party roles."""
    return MessageChannel(sender, receiver)


@dataclass
class Party:
    """Base protocol actor with an enforced phase order."""

    role: str
    state: Phase = Phase.TRANSMITTING

    def advance(self, to: Phase):
        if to.value < self.state.value:
            raise ProtocolError(f"{self.role}: cannot go back from {self.state} to {to}")
        self.state = to


@dataclass
class _Transmitter(Party):
    """Alice or Bob: holds the per-slot pulse-choice log."""

    classes: list = field(default_factory=list)
    bases: list = field(default_factory=list)
    bits: list = field(default_factory=list)

    def record_shard(self, cls, basis, bits):
        self.classes.append(cls)
        self.bases.append(basis)
        self.bits.append(bits)

    def log_arrays(self):
        return (
            np.concatenate(self.classes) if self.classes else np.empty(0, np.int8),
            np.concatenate(self.bases) if self.bases else np.empty(0, np.int8),
            np.concatenate(self.bits) if self.bits else np.empty(0, np.int8),
        )

    def choice(self, slot: int):
        """Per-slot view of the local pulse log."""
        from .montecarlo import PulseChoice

        cls, basis, bits = self.log_arrays()
        return PulseChoice(int(cls[slot]), int(basis[slot]), int(bits[slot]))


@dataclass
class _Relay(Party):
    """Charlie: sees clicks, derives and announces coincidences."""

    n_announced: int = 0

    @staticmethod
    def detect(clicks: np.ndarray):
        """Recompute success/pattern from raw clicks (trusts nothing else)."""
        pat_a = clicks[:, 0] & ~clicks[:, 1] & ~clicks[:, 2] & clicks[:, 3]
        pat_b = ~clicks[:, 0] & clicks[:, 1] & clicks[:, 2] & ~clicks[:, 3]
        pattern = np.full(len(clicks), -1, dtype=np.int8)
        pattern[pat_a] = 0
        pattern[pat_b] = 1
        return pat_a | pat_b, pattern


class SiftedKey(NamedTuple):
    """Bit string with the slot index of every kept bit."""

    bits: np.ndarray
    slots: np.ndarray
    basis: str = "Z"
    intensity_class: str = "signal-signal"

    def __len__(self) -> int:
        return len(self.bits)


@dataclass
class SiftResult:
    alice_key: SiftedKey
    bob_key: SiftedKey
    tallies: TallyMatrix
    n_announced: int = 0
    n_key: int = 0
    n_estimation: int = 0
    n_mismatched: int = 0

    def check_conservation(self):
        if self.n_announced != self.n_key + self.n_estimation + self.n_mismatched:
            raise ProtocolError(
                f"announced successes not conserved: {self.n_announced} != "
                f"{self.n_key} + {self.n_estimation} + {self.n_mismatched}"
            )


def _sift_arrays(a_cls, a_basis, a_bit, b_cls, b_basis, b_bit, success_slots, offset=0):
    """Classify announced successes of one block; returns key bits and counters."""
    idx = success_slots - offset
    matched = a_basis[idx] == b_basis[idx]
    keyable = matched & (a_basis[idx] == 0) & (a_cls[idx] == 0) & (b_cls[idx] == 0)
    key_idx = idx[keyable]
    return {
        "key_slots": success_slots[keyable],
        "alice_bits": a_bit[key_idx].astype(np.uint8),
        "bob_bits": (1 - b_bit[key_idx]).astype(np.uint8),  # undo anti-correlation
        "n_key": int(keyable.sum()),
        "n_estimation": int((matched & ~keyable).sum()),
        "n_mismatched": int((~matched).sum()),
    }


def sift(alice_log, bob_log, announcements: Iterable[Announcement]) -> SiftResult:
    """Sift a complete session from full pulse logs and announcements.

    ``alice_log``/``bob_log`` are ``(classes, bases, bits)`` arrays over all
    slots.  Announcements referencing unknown or repeated slots raise
    :class:`ProtocolError`.
    """
    a_cls, a_basis, a_bit = (np.asarray(x) for x in alice_log)
    b_cls, b_basis, b_bit = (np.asarray(x) for x in bob_log)
    n = len(a_cls)
    if not (len(b_cls) == len(a_basis) == len(b_basis) == n):
        raise ProtocolError("transmitter logs disagree on slot count")

    slots = []
    for ann in announcements:
        if not ann.success:
            raise ProtocolError(f"announcement for unsuccessful slot {ann.slot_index}")
        if not 0 <= ann.slot_index < n:
            raise ProtocolError(f"announcement references unknown slot {ann.slot_index}")
        slots.append(ann.slot_index)
    slot_arr = np.asarray(sorted(slots), dtype=np.int64)
    if len(np.unique(slot_arr)) != len(slot_arr):
        raise ProtocolError("duplicate announcement")

    out = _sift_arrays(a_cls, a_basis, a_bit, b_cls, b_basis, b_bit, slot_arr)

    # tallies over all slots, with announced successes as the success set
    success_mask = np.zeros(n, dtype=bool)
    success_mask[slot_arr] = True
    batch = SlotBatch(
        start=0,
        a_class=a_cls, a_basis=a_basis, a_bit=a_bit,
        b_class=b_cls, b_basis=b_basis, b_bit=b_bit,
        clicks=np.zeros((n, 4), dtype=bool),
        success=success_mask,
        pattern=np.where(success_mask, 0, -1).astype(np.int8),
    )
    tallies = tally_from_batch(batch, TallyMatrix.zeros())
    result = SiftResult(
        alice_key=SiftedKey(out["alice_bits"], out["key_slots"]),
        bob_key=SiftedKey(out["bob_bits"], out["key_slots"]),
        tallies=tallies,
        n_announced=len(slot_arr),
        n_key=out["n_key"],
        n_estimation=out["n_estimation"],
        n_mismatched=out["n_mismatched"],
    )
    result.check_conservation()
    return result


@dataclass
class SessionResult:
    alice_key: SiftedKey
    bob_key: SiftedKey
    tallies: TallyMatrix
    report: KeyRateReport | None
    n_announced: int
    n_key: int
    n_estimation: int
    n_mismatched: int

    @property
    def key_error_rate(self) -> float:
        if len(self.alice_key) == 0:
            return 0.0
        return float(np.mean(self.alice_key.bits != self.bob_key.bits))


class _Transcript:
    def __init__(self, path):
        self._fh = open(path, "w") if path else None

    def write(self, record: dict):
        if self._fh:
            self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()


def run_session(
    params: SystemParams,
    num_slots: int,
    seed: int,
    epsilon_total: float = 1e-10,
    transcript_path=None,
    compute_report: bool = True,
) -> SessionResult:
    """Run the full three-party session over a simulated optical layer.

    The tallies are bit-identical to ``simulate_slots(params, num_slots,
    seed)``: both paths share the slot sampler, and the relay re-derives
    coincidences from the raw clicks.  If the session is too small to
    populate every estimation cell the finite-key report is ``None``.
    """
    if num_slots < 1:
        raise ValueError("num_slots must be >= 1")
    alice = _Transmitter(role="alice")
    bob = _Transmitter(role="bob")
    charlie = _Relay(role="charlie")
    chan_ac = message_channel("alice", "charlie")
    chan_bc = message_channel("bob", "charlie")
    charlie_to_a = chan_ac.endpoint("charlie")
    charlie_to_b = chan_bc.endpoint("charlie")
    alice_in = chan_ac.endpoint("alice")
    bob_in = chan_bc.endpoint("bob")

    transcript = _Transcript(transcript_path)
    transcript.write({"v": TRANSCRIPT_VERSION, "type": "session", "slots": num_slots, "seed": seed})

    tallies = TallyMatrix.zeros()
    key_a: list = []
    key_b: list = []
    key_slots: list = []
    n_announced = n_key = n_estimation = n_mismatched = 0

    for batch in iter_shards(params, num_slots, seed):
        alice.record_shard(batch.a_class, batch.a_basis, batch.a_bit)
        bob.record_shard(batch.b_class, batch.b_basis, batch.b_bit)

        success, pattern = charlie.detect(batch.clicks)
        if not (np.array_equal(success, batch.success) and np.array_equal(pattern, batch.pattern)):
            raise ProtocolError("relay post-selection disagrees with channel bookkeeping")
        slot_ids = batch.start + np.nonzero(success)[0]
        announcement_batch = [
            Announcement(int(s), True, "psi_minus") for s in slot_ids
        ]
        charlie.n_announced += len(announcement_batch)
        charlie_to_a.send(announcement_batch)
        charlie_to_b.send(announcement_batch)
        for ann in announcement_batch:
            transcript.write({"v": TRANSCRIPT_VERSION, "type": "announce",
                              "slot": ann.slot_index, "tag": ann.bell_state_tag})

        # both transmitters consume the same announcement batch
        got_a = alice_in.recv()
        got_b = bob_in.recv()
        if got_a != announcement_batch or got_b != announcement_batch:
            raise ProtocolError("announcement delivery mismatch")

        out = _sift_arrays(
            batch.a_class, batch.a_basis, batch.a_bit,
            batch.b_class, batch.b_basis, batch.b_bit,
            slot_ids, offset=batch.start,
        )
        key_a.append(out["alice_bits"])
        key_b.append(out["bob_bits"])
        key_slots.append(out["key_slots"])
        n_announced += len(announcement_batch)
        n_key += out["n_key"]
        n_estimation += out["n_estimation"]
        n_mismatched += out["n_mismatched"]
        tally_from_batch(batch, tallies)

    for party in (alice, bob):
        party.advance(Phase.AWAITING_ANNOUNCEMENTS)
        party.advance(Phase.SIFTING)
        party.advance(Phase.ESTIMATING)
    charlie.advance(Phase.DONE)
    chan_ac.close()
    chan_bc.close()
    transcript.write({"v": TRANSCRIPT_VERSION, "type": "summary",
                      "announced": n_announced, "key": n_key,
                      "estimation": n_estimation, "mismatched": n_mismatched})
    transcript.close()

    report = None
    if compute_report:
        try:
            report = finite_key_pipeline(tallies, params, epsilon_total=epsilon_total)
        except InsufficientDataError:
            report = None
    for party in (alice, bob):
        party.advance(Phase.DONE)

    result = SessionResult(
        alice_key=SiftedKey(
            np.concatenate(key_a) if key_a else np.empty(0, np.uint8),
            np.concatenate(key_slots) if key_slots else np.empty(0, np.int64),
        ),
        bob_key=SiftedKey(
            np.concatenate(key_b) if key_b else np.empty(0, np.uint8),
            np.concatenate(key_slots) if key_slots else np.empty(0, np.int64),
        ),
        tallies=tallies,
        report=report,
        n_announced=n_announced,
        n_key=n_key,
        n_estimation=n_estimation,
        n_mismatched=n_mismatched,
    )
    if n_announced != result.n_key + result.n_estimation + result.n_mismatched:
        raise ProtocolError("announced successes not conserved")
    return result
