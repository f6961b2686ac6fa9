"""Run configuration: flat key=value text schema with dotted sections.

The same canonical serialization backs config files, run manifests and the
wire protocol's SessionConfig frame. Unknown keys are rejected up front so
typos fail loudly; value-level invariants are enforced by LinkParams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from .core import LinkParams, PostselectionWindow


class ConfigError(ValueError):
    """A config file or flag set failed validation."""


MODES = (
    "simulate",
    "analyze",
    "sweep",
    "optimize",
    "tradeoff",
    "serve-alice",
    "serve-bob",
)

_LINK_FLOAT_KEYS = {
    "link.mu": "mu",
    "link.clock_hz": "clock_hz",
    "link.channel_loss_db": "channel_loss_db",
    "link.receiver_loss_db": "receiver_loss_db",
    "link.detector_efficiency": "detector_efficiency",
    "link.visibility": "visibility",
    "link.dark_rate_hz": "dark_rate_hz",
    "link.drift_rate": "drift_rate",
    "link.ec_efficiency": "ec_efficiency",
    "link.duty_cycle": "duty_cycle",
}

KNOWN_KEYS = (
    tuple(_LINK_FLOAT_KEYS)
    + (
        "link.trusted_receiver",
        "link.delta_phi",
        "link.tomography_intensity",
        "run.seed",
        "run.mode",
        "run.output_dir",
        "run.mc_emissions",
        "run.wire_address",
    )
)


@dataclass(frozen=True)
class RunConfig:
    """One validated run: physics parameters plus execution knobs."""

    link: LinkParams = field(default_factory=LinkParams)
    seed: Optional[int] = None
    mode: str = "analyze"
    output_dir: Optional[Path] = None
    mc_emissions: int = 100_000
    wire_address: str = "127.0.0.1:9753"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mc_emissions <= 0:
            raise ConfigError("run.mc_emissions must be positive")
        host, _, port = self.wire_address.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(
                f"run.wire_address must look like host:port, got {self.wire_address!r}"
            )


def parse_items(text: str) -> Dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    items: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def config_from_items(items: Dict[str, str]) -> RunConfig:
    """Validate a flat key->string map into a RunConfig."""
    unknown = sorted(set(items) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")

    link_kwargs: Dict[str, object] = {}
    for key, attr in _LINK_FLOAT_KEYS.items():
        if key in items:
            link_kwargs[attr] = _parse_float(key, items[key])
    if "link.trusted_receiver" in items:
        link_kwargs["trusted_receiver"] = _parse_bool(
            "link.trusted_receiver", items["link.trusted_receiver"]
        )
    delta_phi = (
        _parse_float("link.delta_phi", items["link.delta_phi"])
        if "link.delta_phi" in items
        else math.pi / 40.0
    )
    intensity = (
        _parse_float("link.tomography_intensity", items["link.tomography_intensity"])
        if "link.tomography_intensity" in items
        else 1.0
    )
    try:
        window = PostselectionWindow(delta_phi=delta_phi, tomography_intensity=intensity)
        link = LinkParams(window=window, **link_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    kwargs: Dict[str, object] = {"link": link}
    if "run.seed" in items:
        kwargs["seed"] = _parse_int("run.seed", items["run.seed"])
    if "run.mode" in items:
        kwargs["mode"] = items["run.mode"]
    if "run.output_dir" in items:
        kwargs["output_dir"] = Path(items["run.output_dir"])
    if "run.mc_emissions" in items:
        kwargs["mc_emissions"] = _parse_int("run.mc_emissions", items["run.mc_emissions"])
    if "run.wire_address" in items:
        kwargs["wire_address"] = items["run.wire_address"]
    return RunConfig(**kwargs)


def load_config(path: Path | str) -> RunConfig:
    """Load and validate a config file."""
    text = Path(path).read_text(encoding="utf-8")
    return config_from_items(parse_items(text))


def params_to_items(params: LinkParams) -> Dict[str, str]:
    """Canonical text form of LinkParams (exact float round-trip via repr)."""
    return {
        "link.mu": repr(params.mu),
        "link.clock_hz": repr(params.clock_hz),
        "link.channel_loss_db": repr(params.channel_loss_db),
        "link.receiver_loss_db": repr(params.receiver_loss_db),
        "link.detector_efficiency": repr(params.detector_efficiency),
        "link.visibility": repr(params.visibility),
        "link.dark_rate_hz": repr(params.dark_rate_hz),
        "link.drift_rate": repr(params.drift_rate),
        "link.ec_efficiency": repr(params.ec_efficiency),
        "link.duty_cycle": repr(params.duty_cycle),
        "link.trusted_receiver": "true" if params.trusted_receiver else "false",
        "link.delta_phi": repr(params.window.delta_phi),
        "link.tomography_intensity": repr(params.window.tomography_intensity),
    }


def params_from_items(items: Dict[str, str]) -> LinkParams:
    """Inverse of params_to_items (subset of the full config schema)."""
    return config_from_items(dict(items)).link


def items_to_text(items: Dict[str, str]) -> str:
    """Serialize a key->value map as sorted `key = value` lines."""
    return "".join(f"{key} = {items[key]}\n" for key in sorted(items))


def config_to_items(config: RunConfig) -> Dict[str, str]:
    """Full canonical text form of a RunConfig (for manifests)."""
    items = params_to_items(config.link)
    if config.seed is not None:
        items["run.seed"] = str(config.seed)
    items["run.mode"] = config.mode
    if config.output_dir is not None:
        items["run.output_dir"] = str(config.output_dir)
    items["run.mc_emissions"] = str(config.mc_emissions)
    items["run.wire_address"] = config.wire_address
    return items
