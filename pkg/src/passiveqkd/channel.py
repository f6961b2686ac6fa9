"""Attenuation between transmitter output and detector plane.

Loss is the standard beamsplitter model: each photon independently survives
the channel with probability 10^(-loss/10), and survivors pass the trusted
receiver insertion loss and detector efficiency with a second independent
probability. Both intermediate counts are exposed so the gain can be
referred to either reference plane.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import LinkParams
from .transmitter import QubitEmission


@dataclass(frozen=True)
class ChannelState:
    """Transmittances of the quantum channel and the trusted receiver."""

    transmittance_channel: float
    transmittance_receiver: float

    def __post_init__(self) -> None:
        for name in ("transmittance_channel", "transmittance_receiver"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value!r}")

    @property
    def transmittance_total(self) -> float:
        return self.transmittance_channel * self.transmittance_receiver

    @staticmethod
    def from_params(params: LinkParams) -> "ChannelState":
        return ChannelState(
            transmittance_channel=params.channel_transmittance,
            transmittance_receiver=params.receiver_transmittance,
        )


def transmit(
    emission: QubitEmission, state: ChannelState, rng: np.random.Generator
) -> Tuple[int, int]:
    """Propagate one emission; returns photon counts at (channel output,
    detector plane)."""
    at_channel = int(rng.binomial(emission.photon_count, state.transmittance_channel))
    at_detector = int(rng.binomial(at_channel, state.transmittance_receiver))
    return at_channel, at_detector


def transmit_batch(
    photon_counts: np.ndarray, state: ChannelState, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized transmit over an array of emission photon counts."""
    at_channel = rng.binomial(photon_counts, state.transmittance_channel)
    at_detector = rng.binomial(at_channel, state.transmittance_receiver)
    return at_channel, at_detector


def loss_for_fiber(length_km: float, alpha_db_per_km: float, extra_db: float = 0.0) -> float:
    """Total loss budget of a fiber span plus fixed extras (connectors etc.)."""
    if length_km < 0.0 or alpha_db_per_km < 0.0 or extra_db < 0.0:
        raise ValueError("fiber loss inputs must be non-negative")
    return length_km * alpha_db_per_km + extra_db
