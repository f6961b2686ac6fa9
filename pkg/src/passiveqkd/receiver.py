"""Imbalanced-MZI receiver: passive basis choice, interference, phase servo.

The receiver projects each arriving pulse pair onto one of four detectors,
named after the state they fire for at zero relative phase: X1 (diagonal),
X0 (antidiagonal), Y1 (right circular), Y0 (left circular). A photon in
basis b clicks the detector with center phase x' with probability
(1 + V cos(dphi - theta - x'))/2, where theta is the slowly drifting
Alice-Bob interferometer phase. A controller alternates between key
generation and stabilization: drift pushes the windowed QBER above an entry
threshold, stabilization servoes theta back toward zero until the
announced-state comparison confirms a low enough QBER.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .core import LinkParams, StateLabel, wrap_phase


class ReceiverMode(Enum):
    KEYGEN = "KeyGen"
    STABILIZING = "Stabilizing"


@dataclass(frozen=True)
class ReceiverState:
    """Receiver phase/mode plus the detection constants it owns."""

    theta: float = 0.0
    mode: ReceiverMode = ReceiverMode.KEYGEN
    visibility: float = 0.98
    dark_rate_hz: float = 0.0
    gate_hz: float = 1.5e6
    drift_rate: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")
        if self.dark_rate_hz < 0.0 or self.drift_rate < 0.0:
            raise ValueError("rates must be non-negative")
        if not -math.pi < self.theta <= math.pi:
            raise ValueError("theta must lie in (-pi, pi]")

    @property
    def dark_prob_per_gate(self) -> float:
        return self.dark_rate_hz / self.gate_hz

    @staticmethod
    def from_params(params: LinkParams) -> "ReceiverState":
        return ReceiverState(
            theta=0.0,
            mode=ReceiverMode.KEYGEN,
            visibility=params.visibility,
            dark_rate_hz=params.dark_rate_hz,
            gate_hz=params.clock_hz,
            drift_rate=params.drift_rate,
        )


@dataclass(frozen=True)
class DetectionEvent:
    """One resolved receiver click."""

    emission_index: int
    detector: StateLabel
    from_dark: bool
    mode_at_detection: ReceiverMode


def click_probability(
    delta_phi: float, theta: float, visibility: float, detector: StateLabel
) -> float:
    """Probability that a photon in the detector's basis clicks it."""
    return (
        1.0 + visibility * math.cos(delta_phi - theta - detector.center_phase)
    ) / 2.0


def detect(
    photons: int,
    delta_phi: float,
    state: ReceiverState,
    rng: np.random.Generator,
    emission_index: int = 0,
) -> Optional[DetectionEvent]:
    """Measure one pulse pair; None when no detector fires.

    Every photon reaching the detector plane picks a basis at the passive
    beamsplitter and lands on one detector of that basis; dark counts fire
    each detector independently. Multiple distinct clicks squash to one
    event by uniform choice.
    """
    if photons < 0:
        raise ValueError("photon count must be non-negative")
    signal: set[int] = set()
    for _ in range(photons):
        basis = int(rng.integers(0, 2))
        bit1 = StateLabel.from_code(2 * basis)
        p1 = click_probability(delta_phi, state.theta, state.visibility, bit1)
        bit = 1 if rng.random() < p1 else 0
        signal.add(2 * basis + (1 - bit))
    dark: set[int] = set()
    p_dark = state.dark_prob_per_gate
    if p_dark > 0.0:
        for code in range(4):
            if rng.random() < p_dark:
                dark.add(code)
    clicked = sorted(signal | dark)
    if not clicked:
        return None
    code = clicked[int(rng.integers(0, len(clicked)))]
    return DetectionEvent(
        emission_index=emission_index,
        detector=StateLabel.from_code(code),
        from_dark=code in dark and code not in signal,
        mode_at_detection=state.mode,
    )


def detect_batch(
    photons: np.ndarray,
    delta_phi: np.ndarray,
    theta: np.ndarray,
    state: ReceiverState,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized detect over emission arrays with a per-emission theta.

    Returns (detector_code, from_dark); detector_code is -1 where nothing
    fired. Consumption order of the random stream is fixed (single-photon
    block, multiphoton events in index order, then dark counts), so results
    replay bit-exactly for a given generator state.
    """
    n = photons.shape[0]
    codes = np.full(n, -1, dtype=np.int8)
    vis = state.visibility

    singles = np.flatnonzero(photons == 1)
    if singles.size:
        basis = rng.integers(0, 2, size=singles.size)
        ref = basis * (math.pi / 2.0)
        p1 = (1.0 + vis * np.cos(delta_phi[singles] - theta[singles] - ref)) / 2.0
        bit = rng.random(singles.size) < p1
        codes[singles] = (2 * basis + (1 - bit.astype(np.int8))).astype(np.int8)

    multis = np.flatnonzero(photons >= 2)
    for idx in multis:
        clicked: set[int] = set()
        for _ in range(int(photons[idx])):
            b = int(rng.integers(0, 2))
            p1 = (
                1.0
                + vis * math.cos(delta_phi[idx] - theta[idx] - b * math.pi / 2.0)
            ) / 2.0
            bit = 1 if rng.random() < p1 else 0
            clicked.add(2 * b + (1 - bit))
        members = sorted(clicked)
        codes[idx] = members[int(rng.integers(0, len(members)))]

    p_dark = state.dark_prob_per_gate
    if p_dark <= 0.0:
        return codes, np.zeros(n, dtype=bool)

    dark = rng.random((n, 4)) < p_dark
    clicked_any = dark.copy()
    has_signal = codes >= 0
    clicked_any[has_signal, codes[has_signal]] = True
    n_clicked = clicked_any.sum(axis=1)
    resolved = np.full(n, -1, dtype=np.int8)
    pick = rng.random(n)  # drawn for every gate to keep consumption fixed
    rows = np.flatnonzero(n_clicked > 0)
    if rows.size:
        order = np.cumsum(clicked_any[rows], axis=1)
        target = (pick[rows] * n_clicked[rows]).astype(np.int64) + 1
        resolved[rows] = np.argmax(order == target[:, None], axis=1).astype(np.int8)
    from_dark = np.zeros(n, dtype=bool)
    if rows.size:
        got_dark = dark[rows, resolved[rows]]
        was_signal = has_signal[rows] & (codes[rows] == resolved[rows])
        from_dark[rows] = got_dark & ~was_signal
    return resolved, from_dark


def advance_phase(
    state: ReceiverState, dt: float, rng: np.random.Generator
) -> ReceiverState:
    """Random-walk step of the relative interferometer phase over dt seconds."""
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    if dt == 0.0 or state.drift_rate == 0.0:
        return state
    step = rng.normal(0.0, state.drift_rate * math.sqrt(dt))
    return replace(state, theta=wrap_phase(state.theta + step))


def phase_path(
    theta0: float,
    n_steps: int,
    dt: float,
    drift_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Theta after each of n_steps random-walk steps (wrapped to (-pi, pi])."""
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if drift_rate == 0.0 or dt == 0.0:
        return np.full(n_steps, theta0)
    steps = rng.normal(0.0, drift_rate * math.sqrt(dt), size=n_steps)
    path = theta0 + np.cumsum(steps)
    return np.mod(path + math.pi, 2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class StabilizerConfig:
    """Servo and mode-switch knobs.

    Defaults are tuned so a link drifting at ~0.3 rad/sqrt(s) settles near a
    50% key-generation duty cycle; the entry/exit thresholds bracket the
    static QBER of the fitted link.
    """

    q_enter: float = 0.08
    q_exit: float = 0.065
    slew_rad_per_s: float = 0.3
    control_interval_s: float = 0.01
    qber_window_intervals: int = 15

    def __post_init__(self) -> None:
        if not 0.0 < self.q_exit < self.q_enter < 0.5:
            raise ValueError("need 0 < q_exit < q_enter < 0.5")
        if self.slew_rad_per_s <= 0.0 or self.control_interval_s <= 0.0:
            raise ValueError("slew rate and control interval must be positive")
        if self.qber_window_intervals < 1:
            raise ValueError("qber_window_intervals must be >= 1")


def stabilization_controller(
    state: ReceiverState,
    recent_qber_estimate: float,
    thresholds: Tuple[float, float] = (0.08, 0.065),
    *,
    slew_rad_per_s: float = 0.3,
    dt_s: float = 0.01,
) -> ReceiverState:
    """One control step: switch modes on the QBER estimate, servo the phase.

    In KeyGen the estimate is the windowed disclosed-sample QBER; in
    Stabilizing it comes from comparing detections against announced states.
    While stabilizing, theta slews toward 0 at the configured rate.
    """
    q_enter, q_exit = thresholds
    if not 0.0 < q_exit < q_enter < 0.5:
        raise ValueError("need 0 < q_exit < q_enter < 0.5")
    if state.mode is ReceiverMode.KEYGEN:
        if recent_qber_estimate > q_enter:
            return replace(state, mode=ReceiverMode.STABILIZING)
        return state
    # Stabilizing: servo toward zero, then test the exit condition.
    step = slew_rad_per_s * dt_s
    theta = math.copysign(max(abs(state.theta) - step, 0.0), state.theta)
    mode = ReceiverMode.KEYGEN if recent_qber_estimate < q_exit else ReceiverMode.STABILIZING
    return replace(state, theta=theta, mode=mode)
