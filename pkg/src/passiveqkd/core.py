"""Foundational types and closed-form key-rate formulas.

Everything in this module is a pure function of its arguments (stdlib math
only, no package-internal dependencies), so it is safe to call from any
thread. The security accounting follows the GLLP recipe for a weak coherent
source without decoy states: the multiphoton fraction of the gain is written
off to the adversary, the single-photon phase error rate is bounded by
QBER/Y1, and error-correction leakage is charged as f * h(QBER).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

TWO_PI = 2.0 * math.pi


class Basis(Enum):
    X = "X"
    Y = "Y"


class StateLabel(Enum):
    """One of the four equatorial BB84 states.

    The value tuple is (basis, bit, center_phase). The phase mapping is the
    fixed bijection X1<->0, X0<->pi, Y1<->pi/2, Y0<->3pi/2; same-basis labels
    sit exactly pi apart on the equator.
    """

    X1 = (Basis.X, 1, 0.0)
    X0 = (Basis.X, 0, math.pi)
    Y1 = (Basis.Y, 1, math.pi / 2.0)
    Y0 = (Basis.Y, 0, 3.0 * math.pi / 2.0)

    @property
    def basis(self) -> Basis:
        return self.value[0]

    @property
    def bit(self) -> int:
        return self.value[1]

    @property
    def center_phase(self) -> float:
        return self.value[2]

    @property
    def code(self) -> int:
        """Compact integer code (X1=0, X0=1, Y1=2, Y0=3) used by array code."""
        return _LABEL_ORDER.index(self)

    @staticmethod
    def from_code(code: int) -> "StateLabel":
        return _LABEL_ORDER[code]


_LABEL_ORDER = (StateLabel.X1, StateLabel.X0, StateLabel.Y1, StateLabel.Y0)

#: Center phases indexed by label code.
LABEL_CENTER_PHASES = tuple(lab.center_phase for lab in _LABEL_ORDER)


@dataclass(frozen=True)
class PostselectionWindow:
    """Acceptance window of the tomography comparator.

    delta_phi is the half-width of the accepted phase arc around each of the
    four center phases; tomography_intensity is the bright-tap intensity I in
    arbitrary linear units. delta_phi < pi/4 keeps the four arcs disjoint.
    """

    delta_phi: float
    tomography_intensity: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_phi < math.pi / 4.0:
            raise ValueError(
                f"delta_phi must lie in (0, pi/4), got {self.delta_phi!r}"
            )
        if self.tomography_intensity <= 0.0:
            raise ValueError("tomography_intensity must be positive")

    @property
    def acceptance_probability(self) -> float:
        """Per-label acceptance probability delta_phi/pi."""
        return self.delta_phi / math.pi

    @property
    def total_acceptance_probability(self) -> float:
        return 4.0 * self.delta_phi / math.pi


def _default_window() -> PostselectionWindow:
    # pi/40 accepts 10% of emissions overall (2.5% per label).
    return PostselectionWindow(delta_phi=math.pi / 40.0)


@dataclass(frozen=True)
class LinkParams:
    """All physical and accounting parameters of one link configuration.

    visibility and detector_efficiency defaults are fitting parameters, not
    measured device constants; ec_efficiency is the reconciliation
    inefficiency f >= 1 (f=1 is the Shannon limit). trusted_receiver selects
    the loss reference plane used for the multiphoton penalty: True refers
    the gain to the channel output (receiver losses trusted), False to the
    detector plane (pessimistic).
    """

    mu: float = 0.15
    clock_hz: float = 1.5e6
    channel_loss_db: float = 6.7
    receiver_loss_db: float = 0.0
    detector_efficiency: float = 0.8
    visibility: float = 0.98
    dark_rate_hz: float = 0.0
    drift_rate: float = 0.0
    ec_efficiency: float = 1.16
    duty_cycle: float = 0.5
    trusted_receiver: bool = True
    window: PostselectionWindow = field(default_factory=_default_window)

    def __post_init__(self) -> None:
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if self.clock_hz <= 0.0:
            raise ValueError("clock_hz must be positive")
        if self.channel_loss_db < 0.0 or self.receiver_loss_db < 0.0:
            raise ValueError("losses must be non-negative")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ValueError("detector_efficiency must be in [0, 1]")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")
        if self.dark_rate_hz < 0.0:
            raise ValueError("dark_rate_hz must be non-negative")
        if self.drift_rate < 0.0:
            raise ValueError("drift_rate must be non-negative")
        if self.ec_efficiency < 1.0:
            raise ValueError("ec_efficiency must be >= 1")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle must be in (0, 1]")

    @property
    def channel_transmittance(self) -> float:
        return 10.0 ** (-self.channel_loss_db / 10.0)

    @property
    def receiver_transmittance(self) -> float:
        """Trusted transmittance: insertion loss times detector efficiency."""
        return 10.0 ** (-self.receiver_loss_db / 10.0) * self.detector_efficiency

    @property
    def dark_prob_per_gate(self) -> float:
        """Dark-count probability per detector per clock gate."""
        return self.dark_rate_hz / self.clock_hz


@dataclass(frozen=True)
class KeyRateReport:
    """Security accounting for one link configuration or simulated session.

    gain_q is referred to the trusted reference plane selected by the
    parameters; secret_fraction is bits per sifted bit after clamping at 0,
    secret_rate_hz the long-run average including the stabilization duty
    cycle. insecure marks configurations where the bound collapses (Y1 = 0
    or phase error saturated at 1/2).
    """

    gain_q: float
    qber: float
    p_multi: float
    y1: float
    e1_bound: float
    leak_ec: float
    secret_fraction: float
    secret_rate_hz: float
    duty_cycle: float
    insecure: bool = False
    seed: Optional[int] = None
    params: Optional[LinkParams] = None


def binary_entropy(p: float) -> float:
    """Binary entropy h(p) in bits, with h(0) = h(1) = 0 by continuity."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"binary_entropy argument must be in [0, 1], got {p!r}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def p_multi(mu: float) -> float:
    """Probability that a Poisson(mu) pulse pair carries more than one photon."""
    if mu < 0.0:
        raise ValueError(f"mu must be non-negative, got {mu!r}")
    # 1 - (1+mu) e^-mu, computed stably for small mu.
    return -math.expm1(-mu) - mu * math.exp(-mu)


def y1_lower_bound(gain_q: float, mu: float) -> float:
    """Lower bound on the single-photon fraction of detections.

    gain_q must be referred to the trusted-loss reference plane. Returns 0
    when every detection could stem from a multiphoton emission (the
    invalid regime: no key can be distilled).
    """
    if gain_q <= 0.0:
        raise ValueError(f"gain_q must be positive, got {gain_q!r}")
    return max(0.0, 1.0 - p_multi(mu) / gain_q)


def delta_factor(delta_phi: float) -> float:
    """State-preparation fidelity factor sin(d)/d of the acceptance window."""
    if not 0.0 <= delta_phi <= math.pi:
        raise ValueError(f"delta_phi must be in (0, pi], got {delta_phi!r}")
    if delta_phi == 0.0:
        return 1.0  # continuous extension
    return math.sin(delta_phi) / delta_phi


def prep_error_rate(delta_phi: float) -> float:
    """Intrinsic single-photon bit-error probability of a postselected state.

    Equals the weight (1 - delta_factor)/2 of the orthogonal component left
    by averaging the equatorial qubit over the acceptance window, i.e. the
    error rate an ideal receiver would see.
    """
    return (1.0 - delta_factor(delta_phi)) / 2.0


def secret_fraction(gain_q: float, qber: float, mu: float, f_ec: float) -> float:
    """Secret bits per sifted bit: Y1 [1 - h(QBER/Y1)] - f h(QBER), clamped at 0.

    Returns 0 in the insecure regime (Y1 = 0 or phase-error bound >= 1/2).
    """
    if not 0.0 <= qber < 0.5:
        raise ValueError(f"qber must be in [0, 0.5), got {qber!r}")
    y1 = y1_lower_bound(gain_q, mu)
    if y1 <= 0.0:
        return 0.0
    e1 = qber / y1
    if e1 >= 0.5:
        return 0.0
    leak = f_ec * binary_entropy(qber)
    return max(0.0, y1 * (1.0 - binary_entropy(e1)) - leak)


def arcsine_cdf(v: float, i0: float) -> float:
    """CDF of the tomography intensity I(1 + cos dphi) under uniform dphi.

    Exact law: F(v) = 1 - arccos(v/i0 - 1)/pi on [0, 2 i0].
    """
    if i0 <= 0.0:
        raise ValueError(f"i0 must be positive, got {i0!r}")
    if not 0.0 <= v <= 2.0 * i0:
        raise ValueError(f"v must be in [0, 2*i0], got {v!r}")
    return 1.0 - math.acos(v / i0 - 1.0) / math.pi


def key_rate_report(
    gain_trusted: float,
    gain_detector: float,
    qber: float,
    params: LinkParams,
    *,
    accept_fraction: float,
    sift_factor: float = 0.5,
    duty_cycle: Optional[float] = None,
    seed: Optional[int] = None,
) -> KeyRateReport:
    """Assemble a KeyRateReport from gains and QBER.

    gain_trusted feeds the multiphoton penalty; gain_detector feeds the
    physical click rate. The secret rate is
    clock * accept_fraction * gain_detector * sift_factor * duty * fraction.
    """
    duty = params.duty_cycle if duty_cycle is None else duty_cycle
    pm = p_multi(params.mu)
    if gain_trusted > 0.0:
        y1 = y1_lower_bound(gain_trusted, params.mu)
    else:
        y1 = 0.0
    e1 = min(qber / y1, 0.5) if y1 > 0.0 else 0.5
    leak = params.ec_efficiency * binary_entropy(min(qber, 1.0))
    if gain_trusted > 0.0 and qber < 0.5:
        fraction = secret_fraction(gain_trusted, qber, params.mu, params.ec_efficiency)
    else:
        fraction = 0.0  # saturated QBER or no gain: nothing distillable
    rate = (
        params.clock_hz
        * accept_fraction
        * gain_detector
        * sift_factor
        * duty
        * fraction
    )
    return KeyRateReport(
        gain_q=gain_trusted,
        qber=qber,
        p_multi=pm,
        y1=y1,
        e1_bound=max(e1, qber),
        leak_ec=leak,
        secret_fraction=fraction,
        secret_rate_hz=rate,
        duty_cycle=duty,
        insecure=fraction <= 0.0,
        seed=seed,
        params=params,
    )


def wrap_phase(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi
