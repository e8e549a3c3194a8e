"""Everything between reader antenna and card chip.

Tap-induced phase rotation, carrier frequency hopping, propagation
baseline phase, and free-space link-budget quantities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidInputError
from .phy import SPEED_OF_LIGHT


@dataclass(frozen=True)
class TapProfile:
    """Shape of the phase rotation one finger tap induces.

    A press pulls the phase smoothly from the baseline down to the
    plateau, so the phase-difference trace dips first and bumps on
    release. ``plateau_shift`` is canonicalized to a negative value;
    passing its magnitude is fine. ``press_dip_depth`` and
    ``release_bump_height`` are the resulting peak excursions of the
    phase derivative in rad/s; leave them unset to take the values the
    raised-cosine ramps imply.
    """

    plateau_shift: float = -0.6
    transition_width_s: float = 0.06
    press_dip_depth: float | None = None
    release_bump_height: float | None = None

    def __post_init__(self):
        if abs(self.plateau_shift) >= math.pi:
            raise InvalidInputError("plateau magnitude must stay below pi")
        if self.plateau_shift == 0:
            raise InvalidInputError("plateau_shift must be nonzero")
        object.__setattr__(self, "plateau_shift", -abs(self.plateau_shift))
        if self.transition_width_s <= 0:
            raise InvalidInputError("transition_width_s must be positive")
        implied = abs(self.plateau_shift) * math.pi / (2.0 * self.transition_width_s)
        if self.press_dip_depth is None:
            object.__setattr__(self, "press_dip_depth", implied)
        if self.release_bump_height is None:
            object.__setattr__(self, "release_bump_height", implied)
        if self.press_dip_depth <= 0 or self.release_bump_height <= 0:
            raise InvalidInputError("derivative excursions must be positive")

    @property
    def press_ramp_s(self) -> float:
        return abs(self.plateau_shift) * math.pi / (2.0 * self.press_dip_depth)

    @property
    def release_ramp_s(self) -> float:
        return abs(self.plateau_shift) * math.pi / (2.0 * self.release_bump_height)


@dataclass(frozen=True)
class RhythmSpec:
    """Ground-truth press/release times of one tapping rhythm."""

    taps: tuple
    duration_s: float

    def __post_init__(self):
        if len(self.taps) < 4:
            raise InvalidInputError("a rhythm needs at least 4 taps")
        prev_release = -math.inf
        for press, release in self.taps:
            if not prev_release < press < release:
                raise InvalidInputError("taps must be strictly ordered")
            prev_release = release
        if self.duration_s < prev_release:
            raise InvalidInputError("duration must cover the last release")

    @property
    def n_taps(self) -> int:
        return len(self.taps)

    def press_times(self) -> np.ndarray:
        return np.array([p for p, _ in self.taps])

    def release_times(self) -> np.ndarray:
        return np.array([r for _, r in self.taps])


def save_rhythm(spec: RhythmSpec, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "duration_s": spec.duration_s,
        "taps": [{"press_s": p, "release_s": r} for p, r in spec.taps],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def load_rhythm(path: str | Path) -> RhythmSpec:
    data = json.loads(Path(path).read_text())
    taps = tuple((float(t["press_s"]), float(t["release_s"])) for t in data["taps"])
    return RhythmSpec(taps=taps, duration_s=float(data["duration_s"]))


def _raised_cosine(x: np.ndarray) -> np.ndarray:
    """0 to 1 smoothly as x goes 0 to 1."""
    return 0.5 * (1.0 - np.cos(np.pi * np.clip(x, 0.0, 1.0)))


def tap_phase(t, rhythm: RhythmSpec, profile: TapProfile):
    """Tap-induced phase rotation at time t (radians).

    Zero outside every tap span. After each press the phase ramps to the
    plateau over the press ramp; it ramps back to zero ending exactly at
    the release instant. Scalar or array input.
    """
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < -1e-12) or np.any(arr > rhythm.duration_s + 1e-12):
        raise DomainError("t outside [0, rhythm.duration]")

    out = np.zeros_like(arr)
    w_press = profile.press_ramp_s
    w_release = profile.release_ramp_s
    for press, release in rhythm.taps:
        active = (arr >= press) & (arr <= release)
        if not np.any(active):
            continue
        ta = arr[active]
        shape = np.ones_like(ta)
        rising = ta < press + w_press
        shape[rising] = _raised_cosine((ta[rising] - press) / w_press)
        falling = ta > release - w_release
        shape[falling] = np.minimum(
            shape[falling], _raised_cosine((release - ta[falling]) / w_release)
        )
        out[active] = profile.plateau_shift * shape
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class CarrierPlan:
    """Fixed carrier or FCC-style pseudo-random channel hopping."""

    mode: str = "fixed"
    fixed_freq_hz: float = 915e6
    channel_centers_hz: tuple = ()
    hop_interval_s: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "fcc-hopping"):
            raise InvalidInputError(f"unknown carrier mode {self.mode!r}")
        if self.mode == "fcc-hopping":
            centers = self.channel_centers_hz or default_fcc_channels()
            object.__setattr__(self, "channel_centers_hz", tuple(centers))
            if len(self.channel_centers_hz) != 50:
                raise InvalidInputError("fcc plan needs 50 channels")
            if self.hop_interval_s > 0.4:
                raise InvalidInputError("dwell must not exceed 0.4 s")


def default_fcc_channels() -> tuple:
    """50 evenly spaced channels spanning 902 to 928 MHz."""
    return tuple(902.75e6 + 0.5e6 * k for k in range(50))


def _channel_index(plan: CarrierPlan, interval: int) -> int:
    rng = np.random.Generator(np.random.Philox(key=plan.seed, counter=[0, 0, 0, interval]))
    return int(rng.integers(0, len(plan.channel_centers_hz)))


def carrier_at(t, plan: CarrierPlan):
    """Carrier frequency in Hz at time t (scalar or array)."""
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < -1e-12):
        raise DomainError("t must be non-negative")
    if plan.mode == "fixed":
        out = np.full(arr.shape, plan.fixed_freq_hz)
        return float(out[0]) if scalar else out
    intervals = np.floor(arr / plan.hop_interval_s).astype(np.int64)
    out = np.empty(arr.shape)
    for k in np.unique(intervals):
        out[intervals == k] = plan.channel_centers_hz[_channel_index(plan, int(k))]
    return float(out[0]) if scalar else out


def baseline_phase(d0_m: float, freq_hz: float, phi_reader: float, phi_card: float) -> float:
    """Round-trip propagation phase plus circuit offsets, in [0, 2pi)."""
    if d0_m <= 0 or freq_hz <= 0:
        raise InvalidInputError("d0_m and freq_hz must be positive")
    phase = 4.0 * math.pi * d0_m * freq_hz / SPEED_OF_LIGHT + phi_reader + phi_card
    return float(phase % (2.0 * math.pi))


def fspl(d_m: float, lambda_m: float) -> float:
    """Free-space path loss (4 pi d / lambda)^2, dimensionless."""
    if d_m <= 0 or lambda_m <= 0:
        raise InvalidInputError("d_m and lambda_m must be positive")
    return (4.0 * math.pi * d_m / lambda_m) ** 2


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power, gains, wavelength, RCS, and the three distances."""

    p_t_w: float = 1.0
    g_t: float = 6.3
    g_r: float = 6.3
    lambda_m: float = SPEED_OF_LIGHT / 915e6
    sigma_rcs_m2: float = 0.005
    d0_m: float = 1.016
    d1_m: float = 2.032
    d2_m: float = 1.016

    def __post_init__(self):
        for name in ("p_t_w", "g_t", "g_r", "lambda_m", "sigma_rcs_m2", "d0_m", "d1_m", "d2_m"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")


def link_powers(lb: LinkBudget) -> dict:
    """Forward-computed link powers in watts.

    p_card: reader signal strength at the card. eirp_card: equivalent
    isotropically radiated power of the backscattering card. p_cw_d1 and
    p_bs_d2: carrier and backscatter strength at a sniffer placed d1
    from the reader and d2 from the card.
    """
    four_pi = 4.0 * math.pi
    p_card = lb.p_t_w * lb.g_t * (lb.lambda_m / (four_pi * lb.d0_m)) ** 2
    eirp_card = lb.p_t_w * lb.g_t * lb.sigma_rcs_m2 / (four_pi * lb.d0_m ** 2)
    p_cw_d1 = lb.p_t_w * lb.g_t * lb.g_r * (lb.lambda_m / (four_pi * lb.d1_m)) ** 2
    p_bs_d2 = (
        lb.p_t_w * lb.g_t * lb.g_r * lb.sigma_rcs_m2 * lb.lambda_m ** 2
        / (four_pi ** 3 * lb.d0_m ** 2 * lb.d2_m ** 2)
    )
    return {"p_card": p_card, "eirp_card": eirp_card, "p_cw_d1": p_cw_d1, "p_bs_d2": p_bs_d2}


def watts_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w * 1000.0)


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) / 1000.0


def dbi_to_linear(g_dbi: float) -> float:
    return 10.0 ** (g_dbi / 10.0)


_LB_FIELDS = ("p_t", "g_t", "g_r", "lambda", "sigma_rcs", "d0", "d1", "d2")


def linkbudget_from_dict(data: dict) -> LinkBudget:
    """Build a LinkBudget from plain keys, accepting _dbm/_dbi variants.

    Keys: p_t_w or p_t_dbm; g_t / g_r or g_t_dbi / g_r_dbi; lambda_m;
    sigma_rcs_m2; d0_m, d1_m, d2_m.
    """
    kwargs: dict = {}
    data = dict(data)
    if "p_t_dbm" in data:
        kwargs["p_t_w"] = dbm_to_watts(float(data.pop("p_t_dbm")))
    if "p_t_w" in data:
        kwargs["p_t_w"] = float(data.pop("p_t_w"))
    for g in ("g_t", "g_r"):
        if f"{g}_dbi" in data:
            kwargs[g] = dbi_to_linear(float(data.pop(f"{g}_dbi")))
        if g in data:
            kwargs[g] = float(data.pop(g))
    for key, attr in (
        ("lambda_m", "lambda_m"),
        ("sigma_rcs_m2", "sigma_rcs_m2"),
        ("d0_m", "d0_m"),
        ("d1_m", "d1_m"),
        ("d2_m", "d2_m"),
    ):
        if key in data:
            kwargs[attr] = float(data.pop(key))
    if data:
        raise InvalidInputError(f"unknown link-budget keys: {sorted(data)}")
    return LinkBudget(**kwargs)
