"""Passive source simulation: phase diffusion, tomography, postselection.

Each clock period emits one pulse pair whose phase difference is uniform on
[0, 2pi) and whose photon number is Poisson(mu). The bright tomography tap
converts the phase difference into two detector intensities; comparator
thresholds on those intensities either assign one of the four BB84 labels or
discard the emission. Postselection is modeled as noiseless, memoryless
classification of the phase difference (optional Gaussian intensity noise is
an extension knob, default off).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from .core import LABEL_CENTER_PHASES, LinkParams, PostselectionWindow, StateLabel


@dataclass(frozen=True)
class QubitEmission:
    """One pulse pair leaving the transmitter.

    label is None when the comparator discarded the emission; timestamp is
    index/clock_hz at emission time.
    """

    index: int
    timestamp: float
    delta_phi: float
    photon_count: int
    label: Optional[StateLabel]


@dataclass(frozen=True)
class ComparatorConfig:
    """Upper and lower comparator thresholds on the tomography intensities.

    Acceptance arcs must stay pairwise disjoint, which bounds each implied
    half-width below pi/4.
    """

    high_threshold: float
    low_threshold: float
    tomography_intensity: float

    def __post_init__(self) -> None:
        i = self.tomography_intensity
        if not 0.0 < self.low_threshold < i < self.high_threshold < 2.0 * i:
            raise ValueError(
                "thresholds must satisfy 0 < low < I < high < 2I, got "
                f"low={self.low_threshold!r} I={i!r} high={self.high_threshold!r}"
            )
        if self.halfwidth_high >= math.pi / 4.0 or self.halfwidth_low >= math.pi / 4.0:
            raise ValueError("acceptance arcs overlap: implied half-width >= pi/4")

    @property
    def halfwidth_high(self) -> float:
        """Half-width of the arcs selected by the high threshold."""
        return math.acos(self.high_threshold / self.tomography_intensity - 1.0)

    @property
    def halfwidth_low(self) -> float:
        """Half-width of the arcs selected by the low threshold."""
        return math.acos(1.0 - self.low_threshold / self.tomography_intensity)

    @staticmethod
    def from_window(window: PostselectionWindow) -> "ComparatorConfig":
        """Symmetric thresholds I(1 +/- cos(delta_phi)) for one half-width."""
        i = window.tomography_intensity
        c = math.cos(window.delta_phi)
        return ComparatorConfig(
            high_threshold=i * (1.0 + c),
            low_threshold=i * (1.0 - c),
            tomography_intensity=i,
        )


def tomography_intensities(delta_phi: float, i: float) -> tuple[float, float]:
    """Intensities on the X and Y tomography detectors for one pulse pair.

    The X arm interferes the pair directly, I(1 + cos dphi); the Y arm sits
    behind the quarter-wave offset, I(1 + sin dphi).
    """
    if i <= 0.0:
        raise ValueError("tomography intensity must be positive")
    return i * (1.0 + math.cos(delta_phi)), i * (1.0 + math.sin(delta_phi))


def postselect(ix: float, iy: float, cfg: ComparatorConfig) -> Optional[StateLabel]:
    """Classify one pulse pair from its tomography intensities.

    At most one comparator can fire because the acceptance arcs are
    disjoint (enforced by ComparatorConfig).
    """
    if ix >= cfg.high_threshold:
        return StateLabel.X1
    if ix <= cfg.low_threshold:
        return StateLabel.X0
    if iy >= cfg.high_threshold:
        return StateLabel.Y1
    if iy <= cfg.low_threshold:
        return StateLabel.Y0
    return None


def threshold_for_rate(target_fraction: float, i: float) -> ComparatorConfig:
    """Thresholds that postselect the target fraction of all emissions.

    Inverts total acceptance 4*delta_phi/pi = target_fraction.
    """
    if not 0.0 < target_fraction < 1.0:
        raise ValueError(
            f"target_fraction must be in (0, 1), got {target_fraction!r}"
        )
    delta_phi = math.pi * target_fraction / 4.0
    return ComparatorConfig.from_window(
        PostselectionWindow(delta_phi=delta_phi, tomography_intensity=i)
    )


def sample_emission(
    rng: np.random.Generator, params: LinkParams, index: int = 0
) -> QubitEmission:
    """Draw one emission: uniform phase difference, Poisson photon number."""
    delta_phi = float(rng.uniform(0.0, 2.0 * math.pi))
    photons = int(rng.poisson(params.mu))
    cfg = ComparatorConfig.from_window(params.window)
    ix, iy = tomography_intensities(delta_phi, params.window.tomography_intensity)
    return QubitEmission(
        index=index,
        timestamp=index / params.clock_hz,
        delta_phi=delta_phi,
        photon_count=photons,
        label=postselect(ix, iy, cfg),
    )


@dataclass(frozen=True)
class EmissionBatch:
    """Columnar view of consecutive emissions (label_code -1 = discarded)."""

    start_index: int
    delta_phi: np.ndarray
    photon_count: np.ndarray
    label_code: np.ndarray

    def __len__(self) -> int:
        return self.delta_phi.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return self.start_index + np.arange(len(self), dtype=np.int64)

    @property
    def accepted(self) -> np.ndarray:
        return self.label_code >= 0

    def emissions(self, clock_hz: float) -> Iterator[QubitEmission]:
        """Materialize per-emission records (accepted and discarded)."""
        for k in range(len(self)):
            code = int(self.label_code[k])
            idx = self.start_index + k
            yield QubitEmission(
                index=idx,
                timestamp=idx / clock_hz,
                delta_phi=float(self.delta_phi[k]),
                photon_count=int(self.photon_count[k]),
                label=StateLabel.from_code(code) if code >= 0 else None,
            )


def classify_batch(delta_phi: np.ndarray, cfg: ComparatorConfig) -> np.ndarray:
    """Vectorized comparator: label codes for an array of phase differences."""
    i = cfg.tomography_intensity
    ix = i * (1.0 + np.cos(delta_phi))
    iy = i * (1.0 + np.sin(delta_phi))
    codes = np.full(delta_phi.shape, -1, dtype=np.int8)
    codes[ix >= cfg.high_threshold] = StateLabel.X1.code
    codes[ix <= cfg.low_threshold] = StateLabel.X0.code
    codes[iy >= cfg.high_threshold] = StateLabel.Y1.code
    codes[iy <= cfg.low_threshold] = StateLabel.Y0.code
    return codes


def sample_batch(
    rng: np.random.Generator,
    params: LinkParams,
    n: int,
    start_index: int = 0,
) -> EmissionBatch:
    """Draw n consecutive emissions as arrays (vectorized sample_emission)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    delta_phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    photons = rng.poisson(params.mu, size=n).astype(np.int64)
    cfg = ComparatorConfig.from_window(params.window)
    return EmissionBatch(
        start_index=start_index,
        delta_phi=delta_phi,
        photon_count=photons,
        label_code=classify_batch(delta_phi, cfg),
    )


def write_emission_trace(path: Path | str, emissions: List[QubitEmission] | Iterator[QubitEmission]) -> int:
    """Export accepted emissions as newline-delimited key=value records.

    Fields per record: index, timestamp_ns, label, photon_count. Returns the
    number of records written.
    """
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for em in emissions:
            if em.label is None:
                continue
            fh.write(
                f"index={em.index} timestamp_ns={round(em.timestamp * 1e9)} "
                f"label={em.label.name} photon_count={em.photon_count}\n"
            )
            count += 1
    return count


def read_emission_trace(path: Path | str) -> List[dict]:
    """Parse an emission trace back into dicts (inverse of the writer)."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = dict(item.split("=", 1) for item in line.split())
            records.append(
                {
                    "index": int(fields["index"]),
                    "timestamp_ns": int(fields["timestamp_ns"]),
                    "label": StateLabel[fields["label"]],
                    "photon_count": int(fields["photon_count"]),
                }
            )
    return records
