"""Closed-form link-quality chain: RSSI -> RSRP -> RSRQ, RSRP -> SINR -> CQI.

All functions are pure. Powers are carried in dBm at the interface and
converted to milliwatts wherever a ratio or a sum is taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

THERMAL_NOISE_DBM_HZ = -174.0
SUBCARRIERS_PER_RB = 12
CQI_SLOPE = 0.5223
CQI_INTERCEPT = 4.6176
CQI_MIN = 0
CQI_MAX = 15

LINEAR_DOMAIN = "linear-domain"
LITERAL_DB = "literal-db"
RSRQ_MODES = (LINEAR_DOMAIN, LITERAL_DB)


class DomainError(ValueError):
    """Input outside the domain of a metric formula."""


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if not mw > 0.0:
        raise DomainError(f"power must be positive to express in dBm, got {mw!r} mW")
    return 10.0 * math.log10(mw)


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")


def _check_rbs(num_rbs: int) -> None:
    if num_rbs < 1:
        raise DomainError(f"num_rbs must be >= 1, got {num_rbs}")


def noise_power_dbm(bandwidth_hz: float) -> float:
    """Thermal noise floor over ``bandwidth_hz``: -174 + 10 log10(W)."""
    if not bandwidth_hz > 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth_hz!r} Hz")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz)


def rsrp_from_rssi(rssi_dbm: float, num_rbs: int) -> float:
    """Per-resource-element power: RSSI spread over 12 subcarriers x J blocks."""
    _check_rbs(num_rbs)
    return rssi_dbm - 10.0 * math.log10(SUBCARRIERS_PER_RB * num_rbs)


def rsrq(rssi_dbm: float, rsrp_dbm: float, num_rbs: int, mode: str = LINEAR_DOMAIN) -> float:
    """Reference signal received quality.

    ``linear-domain`` returns ``10 log10(J * rsrp_mw / rssi_mw)`` (the usual
    N*RSRP/RSSI definition). ``literal-db`` returns ``J * rssi_dbm / rsrp_dbm``
    on the raw dB numbers with no unit conversion; it exists only so the
    typeset ratio can be audited.
    """
    _check_rbs(num_rbs)
    if mode == LINEAR_DOMAIN:
        rssi_mw = dbm_to_mw(rssi_dbm)
        if not rssi_mw > 0.0:
            raise DomainError(f"RSSI linear power is not positive ({rssi_dbm!r} dBm)")
        return mw_to_dbm(num_rbs * dbm_to_mw(rsrp_dbm) / rssi_mw)
    if mode == LITERAL_DB:
        if rsrp_dbm == 0.0:
            raise ZeroDivisionError("literal-db RSRQ divides by rsrp_dbm, which is 0")
        return num_rbs * (rssi_dbm / rsrp_dbm)
    raise ValueError(f"unknown RSRQ mode {mode!r}; expected one of {RSRQ_MODES}")


def sinr(rsrp_dbm: float, noise_dbm: float, interference_mw: Sequence[float] = ()) -> float:
    """SINR in dB of a serving RSRP against noise plus summed interferers (mW)."""
    _check_finite("noise_dbm", noise_dbm)
    total_interference = 0.0
    for power in interference_mw:
        if power < 0:
            raise DomainError(f"interference powers must be >= 0, got {power!r}")
        total_interference += power
    denominator = dbm_to_mw(noise_dbm) + total_interference
    if not denominator > 0.0:
        raise DomainError("noise plus interference underflowed to zero")
    if total_interference == 0.0:
        # Exact dB identity; avoids round-trip error through mW.
        return rsrp_dbm - noise_dbm
    return 10.0 * math.log10(dbm_to_mw(rsrp_dbm) / denominator)


def round_half_away(value: float) -> int:
    if value >= 0:
        return int(math.floor(value + 0.5))
    return -int(math.floor(-value + 0.5))


def quantize_cqi(cqi_raw: float) -> int:
    return min(CQI_MAX, max(CQI_MIN, round_half_away(cqi_raw)))


def cqi_from_sinr(sinr_db: float) -> tuple[float, int]:
    """Affine SINR -> CQI map; returns ``(cqi_raw, cqi)`` with cqi in [0, 15]."""
    _check_finite("sinr_db", sinr_db)
    cqi_raw = CQI_SLOPE * sinr_db + CQI_INTERCEPT
    return cqi_raw, quantize_cqi(cqi_raw)


@dataclass(frozen=True)
class LinkBudget:
    """Inputs to the quality model for one user/gNB link.

    ``noise_dbm`` is derived from ``bandwidth_hz`` when left as ``None``.
    """

    rssi_dbm: float
    num_rbs: int = 100
    bandwidth_hz: float = 20e6
    interference_mw: tuple[float, ...] = field(default_factory=tuple)
    noise_dbm: float | None = None

    def __post_init__(self) -> None:
        _check_finite("rssi_dbm", self.rssi_dbm)
        _check_rbs(self.num_rbs)
        if not self.bandwidth_hz > 0:
            raise DomainError(f"bandwidth must be positive, got {self.bandwidth_hz!r} Hz")
        object.__setattr__(self, "interference_mw", tuple(float(p) for p in self.interference_mw))
        if any(p < 0 for p in self.interference_mw):
            raise DomainError("interference powers must be >= 0")
        if self.noise_dbm is None:
            object.__setattr__(self, "noise_dbm", noise_power_dbm(self.bandwidth_hz))


@dataclass(frozen=True)
class LinkMetrics:
    rsrp_dbm: float
    rsrq_db: float
    sinr_db: float
    cqi_raw: float
    cqi: int


def quality_model(link: LinkBudget, rsrq_mode: str = LINEAR_DOMAIN) -> LinkMetrics:
    """Full chain for one link: the CQI is the affine map applied to the SINR."""
    rsrp_dbm = rsrp_from_rssi(link.rssi_dbm, link.num_rbs)
    rsrq_db = rsrq(link.rssi_dbm, rsrp_dbm, link.num_rbs, mode=rsrq_mode)
    sinr_db = sinr(rsrp_dbm, link.noise_dbm, link.interference_mw)
    cqi_raw, cqi = cqi_from_sinr(sinr_db)
    return LinkMetrics(rsrp_dbm=rsrp_dbm, rsrq_db=rsrq_db, sinr_db=sinr_db, cqi_raw=cqi_raw, cqi=cqi)
