"""Classical post-processing: sifting through privacy amplification.

A session wires transmitter -> channel -> receiver -> sifting -> error
estimation -> reconciliation -> privacy amplification. Error correction is
an oracle (the simulation owns both ends, so Bob's bits are set from
Alice's) with the leakage charged analytically as ceil(f * h(QBER) * n).

Two QBER figures are kept deliberately distinct: SessionTally.qber_estimate
is the protocol's own disclosed-sample estimate (it drives the abort rule),
while KeyRateReport.qber is the full-sample sifted error fraction that the
simulation can observe directly; leakage and the secret fraction use the
latter, matching the asymptotic known-QBER accounting.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .channel import ChannelState, transmit_batch
from .core import (
    Basis,
    KeyRateReport,
    LinkParams,
    StateLabel,
    binary_entropy,
    key_rate_report,
)
from .receiver import (
    DetectionEvent,
    ReceiverMode,
    ReceiverState,
    StabilizerConfig,
    detect_batch,
    phase_path,
    stabilization_controller,
)
from .transmitter import QubitEmission, sample_batch

#: Disclosed fraction of the sifted key used for error estimation.
DEFAULT_SAMPLE_FRACTION = 0.1

#: Sessions abort when the disclosed-sample QBER reaches this level.
DEFAULT_ABORT_QBER = 0.12


class SiftAlignmentError(ValueError):
    """Bob announced a detection at an index Alice never postselected."""


class DegenerateEstimateError(RuntimeError):
    """Error estimation was asked to run with zero disclosed bits."""


class SessionAbort(RuntimeError):
    """The session was torn down (QBER too high for any key)."""


@dataclass
class SiftedRecord:
    """One basis-matched coincidence."""

    emission_index: int
    basis: Basis
    alice_bit: int
    bob_bit: int
    disclosed: bool = False


@dataclass
class SessionTally:
    """Counting statistics of one session."""

    emitted: int = 0
    postselected: int = 0
    postselected_keygen: int = 0
    detected_keygen: int = 0
    sifted: int = 0
    disclosed: int = 0
    errors_in_disclosed: int = 0
    qber_estimate: float = 0.0
    leak_ec_bits: int = 0
    final_key_bits: int = 0


def sift(
    alice_records: Iterable[QubitEmission | Tuple[int, StateLabel]],
    bob_events: Sequence[DetectionEvent],
    tally: Optional[SessionTally] = None,
) -> List[SiftedRecord]:
    """Coincidence sifting: keep basis-matched pairs, drop the rest.

    alice_records may be postselected emissions or bare (index, label)
    pairs. Every Bob event must be a KeyGen-mode detection at an announced
    index; anything else is a stream-alignment fault.
    """
    labels: Dict[int, StateLabel] = {}
    for rec in alice_records:
        if isinstance(rec, QubitEmission):
            if rec.label is None:
                continue
            labels[rec.index] = rec.label
        else:
            idx, lab = rec
            labels[int(idx)] = lab

    sifted: List[SiftedRecord] = []
    for ev in bob_events:
        if ev.mode_at_detection is not ReceiverMode.KEYGEN:
            raise ValueError("only KeyGen-mode detections are eligible for sifting")
        label = labels.get(ev.emission_index)
        if label is None:
            raise SiftAlignmentError(
                f"detection at index {ev.emission_index} has no matching "
                "postselection record"
            )
        if label.basis is not ev.detector.basis:
            continue
        sifted.append(
            SiftedRecord(
                emission_index=ev.emission_index,
                basis=label.basis,
                alice_bit=label.bit,
                bob_bit=ev.detector.bit,
            )
        )
    if tally is not None:
        tally.detected_keygen += len(bob_events)
        tally.sifted += len(sifted)
    return sifted


def estimate_qber(
    sifted: Sequence[SiftedRecord],
    sample_fraction: float,
    rng: np.random.Generator,
    *,
    min_disclosed: int = 0,
) -> float:
    """Disclose a uniform random subset and return its error fraction.

    Disclosed records are flagged and must never enter the final key.
    min_disclosed > 0 forces at least that many disclosures (used by
    sessions so short streams still yield an estimate).
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError("sample_fraction must be in (0, 1]")
    n = len(sifted)
    mask = rng.random(n) < sample_fraction
    if n and mask.sum() < min_disclosed:
        forced = rng.choice(n, size=min_disclosed, replace=False)
        mask[forced] = True
    disclosed = int(mask.sum())
    if disclosed == 0:
        raise DegenerateEstimateError("no bits disclosed; cannot estimate QBER")
    errors = 0
    for rec, take in zip(sifted, mask):
        if take:
            rec.disclosed = True
            if rec.alice_bit != rec.bob_bit:
                errors += 1
    return errors / disclosed


def reconcile_and_account(
    sifted: Sequence[SiftedRecord], qber: float, f_ec: float
) -> Tuple[np.ndarray, int]:
    """Oracle error correction plus analytic leakage accounting.

    Bob's bits are set to Alice's (both ends are simulated); the announced
    information is charged as ceil(f_ec * h(qber) * n). Aborts when the
    charge reaches one bit per bit.
    """
    if not 0.0 <= qber < 0.5:
        raise SessionAbort(f"reconciliation impossible at qber={qber!r}")
    if f_ec < 1.0:
        raise ValueError("f_ec must be >= 1")
    cost = f_ec * binary_entropy(qber)
    if cost >= 1.0:
        raise SessionAbort(
            f"error correction would announce {cost:.3f} bits per bit; no key possible"
        )
    bits = np.empty(len(sifted), dtype=np.uint8)
    for k, rec in enumerate(sifted):
        rec.bob_bit = rec.alice_bit
        bits[k] = rec.alice_bit
    leak = math.ceil(cost * len(sifted))
    return bits, leak


def privacy_amplification(
    key_bits: np.ndarray, secret_fraction: float, seed: int
) -> np.ndarray:
    """Compress the reconciled key with a seeded Toeplitz-family hash.

    Output length is floor(n * secret_fraction); the binary matrix is
    expanded from the seed, so equal (key, seed) pairs give identical
    output on both ends.
    """
    if not 0.0 <= secret_fraction <= 1.0:
        raise ValueError("secret_fraction must be in [0, 1]")
    key_bits = np.asarray(key_bits, dtype=np.uint8)
    n = key_bits.shape[0]
    m = int(n * secret_fraction)
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    expander = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    diagonals = expander.integers(0, 2, size=m + n - 1, dtype=np.uint8)
    return (np.convolve(diagonals, key_bits[::-1], mode="valid") % 2).astype(np.uint8)


@dataclass
class QuantumLayer:
    """Everything the physical layer produced, as per-emission arrays.

    detector_code is -1 where no detector fired; keygen marks emissions
    whose clock period the receiver spent in key-generation mode.
    """

    params: LinkParams
    seed: int
    n_emissions: int
    label_code: np.ndarray
    photons_channel: np.ndarray
    photons_detector: np.ndarray
    detector_code: np.ndarray
    from_dark: np.ndarray
    keygen: np.ndarray

    @property
    def accepted(self) -> np.ndarray:
        return self.label_code >= 0

    @property
    def keygen_emissions(self) -> int:
        return int(self.keygen.sum())

    @property
    def duty_measured(self) -> float:
        return self.keygen_emissions / self.n_emissions if self.n_emissions else 0.0


def simulate_quantum_layer(
    params: LinkParams,
    seed: int,
    n_emissions: int,
    stabilizer: Optional[StabilizerConfig] = None,
) -> QuantumLayer:
    """Run source, channel and receiver for n_emissions clock periods.

    Deterministic in seed: both endpoints of a two-process session run this
    identically as the stand-in for the shared quantum channel. With a
    stabilizer, the controller acts once per control interval on the
    windowed same-basis error fraction; without one, the receiver stays in
    key-generation mode throughout.
    """
    streams = rngmod.session_streams(seed)
    tx_rng, ch_rng, rx_rng = (
        streams["transmitter"],
        streams["channel"],
        streams["receiver"],
    )
    channel_state = ChannelState.from_params(params)
    rx_state = ReceiverState.from_params(params)

    if stabilizer is not None:
        block = max(1, round(stabilizer.control_interval_s * params.clock_hz))
        window: deque[tuple[int, int]] = deque(maxlen=stabilizer.qber_window_intervals)
    else:
        block = 1 << 17
        window = deque(maxlen=1)

    labels: List[np.ndarray] = []
    at_channel: List[np.ndarray] = []
    at_detector: List[np.ndarray] = []
    detectors: List[np.ndarray] = []
    darks: List[np.ndarray] = []
    keygen_flags: List[np.ndarray] = []

    dt = 1.0 / params.clock_hz
    pos = 0
    while pos < n_emissions:
        m = min(block, n_emissions - pos)
        batch = sample_batch(tx_rng, params, m, start_index=pos)
        n_ch, n_det = transmit_batch(batch.photon_count, channel_state, ch_rng)
        theta = phase_path(rx_state.theta, m, dt, params.drift_rate, rx_rng)
        det_code, from_dark = detect_batch(
            n_det, batch.delta_phi, theta, rx_state, rx_rng
        )
        in_keygen = rx_state.mode is ReceiverMode.KEYGEN

        labels.append(batch.label_code)
        at_channel.append(n_ch)
        at_detector.append(n_det)
        detectors.append(det_code)
        darks.append(from_dark)
        keygen_flags.append(np.full(m, in_keygen, dtype=bool))

        if m:
            rx_state = replace(rx_state, theta=float(theta[-1]))

        if stabilizer is not None:
            coincident = (batch.label_code >= 0) & (det_code >= 0)
            matched = coincident & (
                (batch.label_code >> 1) == (det_code >> 1)
            )
            n_err = int(
                np.count_nonzero(
                    matched & ((batch.label_code & 1) != (det_code & 1))
                )
            )
            window.append((int(matched.sum()), n_err))
            estimate = _windowed_estimate(window, rx_state.mode)
            previous_mode = rx_state.mode
            rx_state = stabilization_controller(
                rx_state,
                estimate,
                (stabilizer.q_enter, stabilizer.q_exit),
                slew_rad_per_s=stabilizer.slew_rad_per_s,
                dt_s=stabilizer.control_interval_s,
            )
            if rx_state.mode is not previous_mode:
                window.clear()
        pos += m

    return QuantumLayer(
        params=params,
        seed=seed,
        n_emissions=n_emissions,
        label_code=np.concatenate(labels) if labels else np.zeros(0, dtype=np.int8),
        photons_channel=np.concatenate(at_channel) if at_channel else np.zeros(0, dtype=np.int64),
        photons_detector=np.concatenate(at_detector) if at_detector else np.zeros(0, dtype=np.int64),
        detector_code=np.concatenate(detectors) if detectors else np.zeros(0, dtype=np.int8),
        from_dark=np.concatenate(darks) if darks else np.zeros(0, dtype=bool),
        keygen=np.concatenate(keygen_flags) if keygen_flags else np.zeros(0, dtype=bool),
    )


def _windowed_estimate(window: deque, mode: ReceiverMode) -> float:
    """QBER signal for the controller; conservative when starved of data.

    A partially filled window never triggers a mode switch: with too little
    evidence the controller reports 0 in KeyGen (stay) and 1 while
    Stabilizing (cannot confirm yet).
    """
    full = len(window) == window.maxlen
    n = sum(item[0] for item in window)
    if not full or n == 0:
        return 0.0 if mode is ReceiverMode.KEYGEN else 1.0
    return sum(item[1] for item in window) / n


def coincidence_events(layer: QuantumLayer) -> List[DetectionEvent]:
    """Bob's announceable detections: clicks at postselected indices in KeyGen."""
    mask = layer.accepted & (layer.detector_code >= 0) & layer.keygen
    events = []
    for idx in np.flatnonzero(mask):
        events.append(
            DetectionEvent(
                emission_index=int(idx),
                detector=StateLabel.from_code(int(layer.detector_code[idx])),
                from_dark=bool(layer.from_dark[idx]),
                mode_at_detection=ReceiverMode.KEYGEN,
            )
        )
    return events


def alice_announcements(layer: QuantumLayer) -> List[Tuple[int, StateLabel]]:
    """Alice's postselection announcements (index, label); bits stay local."""
    out = []
    for idx in np.flatnonzero(layer.accepted):
        out.append((int(idx), StateLabel.from_code(int(layer.label_code[idx]))))
    return out


@dataclass
class SessionResult:
    """Outcome of one session: tallies, security report, final keys."""

    params: LinkParams
    seed: int
    n_emissions: int
    keygen_emissions: int
    tally: SessionTally
    report: KeyRateReport
    alice_key: np.ndarray
    bob_key: np.ndarray
    sifted: List[SiftedRecord] = field(default_factory=list)

    @property
    def keygen_seconds(self) -> float:
        return self.keygen_emissions / self.params.clock_hz

    @property
    def sifted_rate_keygen_hz(self) -> float:
        """Sifted bits per second of key-generation time (pre duty cycle)."""
        return self.tally.sifted / self.keygen_seconds if self.keygen_seconds else 0.0

    @property
    def sifted_rate_avg_hz(self) -> float:
        """Sifted bits per wall-clock second including stabilization time."""
        total = self.n_emissions / self.params.clock_hz
        return self.tally.sifted / total if total else 0.0


def run_session(
    params: LinkParams,
    n_emissions: Optional[int] = None,
    duration_s: Optional[float] = None,
    *,
    seed: int = 0,
    stabilizer: Optional[StabilizerConfig] = None,
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION,
    abort_qber: float = DEFAULT_ABORT_QBER,
) -> SessionResult:
    """Simulate one full key-distribution session in a single process.

    Exactly one of n_emissions / duration_s selects the length. Raises
    SessionAbort when the disclosed-sample QBER reaches abort_qber or
    reconciliation cannot possibly leave any key.
    """
    if (n_emissions is None) == (duration_s is None):
        raise ValueError("specify exactly one of n_emissions or duration_s")
    if n_emissions is None:
        n_emissions = round(duration_s * params.clock_hz)
    if n_emissions <= 0:
        raise ValueError("session length must be positive")

    layer = simulate_quantum_layer(params, seed, n_emissions, stabilizer)
    streams = rngmod.session_streams(seed)
    return _postprocess(
        layer,
        disclosure_rng=streams["disclosure"],
        amplification_rng=streams["amplification"],
        stabilizer=stabilizer,
        sample_fraction=sample_fraction,
        abort_qber=abort_qber,
    )


def _postprocess(
    layer: QuantumLayer,
    *,
    disclosure_rng: np.random.Generator,
    amplification_rng: np.random.Generator,
    stabilizer: Optional[StabilizerConfig],
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION,
    abort_qber: float = DEFAULT_ABORT_QBER,
) -> SessionResult:
    """Classical stages shared by the in-process and two-process modes."""
    params = layer.params
    tally = SessionTally(
        emitted=layer.n_emissions,
        postselected=int(layer.accepted.sum()),
        postselected_keygen=int((layer.accepted & layer.keygen).sum()),
    )

    events = coincidence_events(layer)
    sifted = sift(alice_announcements(layer), events, tally)

    amplification_seed = int(amplification_rng.integers(0, 2**63))

    if tally.sifted == 0:
        report = _session_report(layer, tally, qber_full=0.0, stabilizer=stabilizer)
        empty = np.zeros(0, dtype=np.uint8)
        return SessionResult(
            params=params,
            seed=layer.seed,
            n_emissions=layer.n_emissions,
            keygen_emissions=layer.keygen_emissions,
            tally=tally,
            report=report,
            alice_key=empty,
            bob_key=empty,
            sifted=sifted,
        )

    tally.qber_estimate = estimate_qber(
        sifted, sample_fraction, disclosure_rng, min_disclosed=1
    )
    tally.disclosed = sum(rec.disclosed for rec in sifted)
    tally.errors_in_disclosed = sum(
        rec.disclosed and rec.alice_bit != rec.bob_bit for rec in sifted
    )
    if tally.qber_estimate >= abort_qber:
        raise SessionAbort(
            f"disclosed-sample QBER {tally.qber_estimate:.4f} >= abort "
            f"threshold {abort_qber:.4f}"
        )

    errors_total = sum(rec.alice_bit != rec.bob_bit for rec in sifted)
    qber_full = errors_total / tally.sifted

    key_records = [rec for rec in sifted if not rec.disclosed]
    corrected, leak_bits = reconcile_and_account(
        key_records, qber_full, params.ec_efficiency
    )
    tally.leak_ec_bits = leak_bits

    report = _session_report(layer, tally, qber_full=qber_full, stabilizer=stabilizer)
    alice_key = privacy_amplification(
        corrected, report.secret_fraction, amplification_seed
    )
    bob_corrected = np.array([rec.bob_bit for rec in key_records], dtype=np.uint8)
    bob_key = privacy_amplification(
        bob_corrected, report.secret_fraction, amplification_seed
    )
    tally.final_key_bits = int(alice_key.shape[0])

    return SessionResult(
        params=params,
        seed=layer.seed,
        n_emissions=layer.n_emissions,
        keygen_emissions=layer.keygen_emissions,
        tally=tally,
        report=report,
        alice_key=alice_key,
        bob_key=bob_key,
        sifted=sifted,
    )


def _session_report(
    layer: QuantumLayer,
    tally: SessionTally,
    *,
    qber_full: float,
    stabilizer: Optional[StabilizerConfig],
) -> KeyRateReport:
    """Fill the measured-gain key-rate report for one session."""
    params = layer.params
    accept_fraction = tally.postselected / tally.emitted if tally.emitted else 0.0
    if tally.postselected_keygen:
        gain_detector = tally.detected_keygen / tally.postselected_keygen
    else:
        gain_detector = 0.0
    if params.trusted_receiver and params.receiver_transmittance > 0.0:
        gain_trusted = gain_detector / params.receiver_transmittance
    else:
        gain_trusted = gain_detector
    sift_factor = (
        tally.sifted / tally.detected_keygen if tally.detected_keygen else 0.0
    )
    duty = layer.duty_measured if stabilizer is not None else params.duty_cycle
    return key_rate_report(
        gain_trusted,
        gain_detector,
        min(qber_full, 1.0),
        params,
        accept_fraction=accept_fraction,
        sift_factor=sift_factor,
        duty_cycle=duty,
        seed=layer.seed,
    )
