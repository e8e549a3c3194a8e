"""EPC Gen-2 physical layer synthesis.

FM0 baseband encoding, query-round timing, and complex-baseband traces
of the carrier superposed with tag backscatter. The card reflects only
while the baseband level is high, so a trace decomposes into two sample
states: carrier alone (S1) and carrier plus backscatter (S2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError

SPEED_OF_LIGHT = 299_792_458.0

# Microsecond shorthands for Gen-2 timing arithmetic.
US = 1e-6

T1_MIN_S = 238 * US
T1_MAX_S = 262 * US
T1_NOMINAL_S = 250 * US
T1_TYPICAL_LO_S = 244 * US
T1_TYPICAL_HI_S = 247 * US
T1_TYPICAL_MASS = 0.9892
T2_MIN_S = 75 * US
T2_MAX_S = 500 * US

# FM0 preamble: 1 0 1 0 v 1, violation at the fifth symbol.
PREAMBLE_BITS = (1, 0, 1, 0, 1, 1)
PREAMBLE_VIOLATION_INDEX = 4
RN16_PAYLOAD_BITS = 16
RN16_TOTAL_SYMBOLS = 23


@dataclass(frozen=True)
class Fm0Config:
    """Backscatter link parameters.

    ``t_pri`` is the FM0 symbol duration, the reciprocal of the link
    frequency. ``freq_tolerance`` is the fractional BLF tolerance the
    standard allows (0.04 at 40 kHz); it is carried for reports and is
    not applied during synthesis.
    """

    blf_hz: float = 40e3
    sample_rate_hz: float = 1e6
    freq_tolerance: float = 0.04

    def __post_init__(self):
        if not 40e3 <= self.blf_hz <= 640e3:
            raise InvalidInputError(f"blf_hz {self.blf_hz} outside [40e3, 640e3]")
        if self.sample_rate_hz < 10 * self.blf_hz:
            raise InvalidInputError(
                f"sample_rate_hz {self.sample_rate_hz} < 10 x blf ({10 * self.blf_hz})"
            )

    @property
    def t_pri_s(self) -> float:
        return 1.0 / self.blf_hz

    @property
    def t_rn16_s(self) -> float:
        return RN16_TOTAL_SYMBOLS * self.t_pri_s


@dataclass(frozen=True)
class Gen2Timing:
    """Per-round timing sample for one query round.

    ``t1_s`` and ``t2_s`` carry this round's draw of the reply delay and
    the post-reply guard. ``query_cmd_s`` models the Query command as an
    opaque fixed-duration segment.
    """

    rtcal_s: float = 72 * US
    t1_s: float = T1_NOMINAL_S
    t2_s: float = 100 * US
    t_rn16_s: float = 575 * US
    query_cmd_s: float = 200 * US

    def __post_init__(self):
        if not T1_MIN_S - 1e-12 <= self.t1_s <= T1_MAX_S + 1e-12:
            raise InvalidInputError(f"t1_s {self.t1_s} outside [238us, 262us]")
        if not T2_MIN_S - 1e-12 <= self.t2_s <= T2_MAX_S + 1e-12:
            raise InvalidInputError(f"t2_s {self.t2_s} outside [75us, 500us]")
        if self.query_cmd_s <= 0:
            raise InvalidInputError("query_cmd_s must be positive")

    @property
    def t4_s(self) -> float:
        return 2.0 * self.rtcal_s


@dataclass(frozen=True)
class Rn16Message:
    """One tag reply: 6 preamble symbols, 16 random bits, 1 dummy bit."""

    payload_bits: tuple
    preamble_bits: tuple = PREAMBLE_BITS
    dummy_bit: int = 1

    def __post_init__(self):
        if len(self.payload_bits) != RN16_PAYLOAD_BITS:
            raise InvalidInputError("payload must hold 16 bits")
        if any(b not in (0, 1) for b in self.payload_bits):
            raise InvalidInputError("payload bits must be 0/1")
        total = len(self.preamble_bits) + len(self.payload_bits) + 1
        if total != RN16_TOTAL_SYMBOLS:
            raise InvalidInputError(f"symbol count {total} != 23")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rn16Message":
        bits = tuple(int(b) for b in rng.integers(0, 2, RN16_PAYLOAD_BITS))
        return cls(payload_bits=bits)

    @property
    def data_bits(self) -> tuple:
        return self.payload_bits + (self.dummy_bit,)


@dataclass(frozen=True)
class Fm0Waveform:
    """Two-level baseband as half-symbol levels (1 = high, 0 = low)."""

    levels: np.ndarray
    half_period_s: float
    with_preamble: bool

    @property
    def n_symbols(self) -> int:
        return len(self.levels) // 2

    @property
    def duration_s(self) -> float:
        return len(self.levels) * self.half_period_s

    def times(self) -> np.ndarray:
        """Start time of each half-symbol, relative to waveform start."""
        return np.arange(len(self.levels)) * self.half_period_s

    def level_at(self, t: np.ndarray) -> np.ndarray:
        """Level for each time in [0, duration); 0 outside."""
        idx = np.floor(np.asarray(t) / self.half_period_s).astype(np.int64)
        ok = (idx >= 0) & (idx < len(self.levels))
        out = np.zeros(np.shape(t), dtype=np.uint8)
        out[ok] = self.levels[idx[ok]]
        return out


def fm0_encode(bits: Sequence[int], cfg: Fm0Config, with_preamble: bool = False) -> Fm0Waveform:
    """Encode bits as FM0 half-symbol levels.

    The level inverts at every symbol boundary, with an extra mid-symbol
    inversion for each data-0. With the preamble, the fifth preamble
    symbol skips its leading boundary inversion (the standard violation).
    The first half-symbol starts high.
    """
    bits = list(bits)
    if not bits:
        raise InvalidInputError("bit sequence is empty")
    if any(b not in (0, 1) for b in bits):
        raise InvalidInputError("bits must be 0/1")

    symbols: list[tuple[int, bool]] = []  # (bit, invert_at_boundary)
    if with_preamble:
        for k, b in enumerate(PREAMBLE_BITS):
            symbols.append((b, k != PREAMBLE_VIOLATION_INDEX))
    symbols.extend((b, True) for b in bits)

    levels = np.empty(2 * len(symbols), dtype=np.uint8)
    level = 1
    for k, (b, invert) in enumerate(symbols):
        if k > 0 and invert:
            level ^= 1
        levels[2 * k] = level
        if b == 0:
            level ^= 1
        levels[2 * k + 1] = level
    return Fm0Waveform(levels=levels, half_period_s=cfg.t_pri_s / 2.0, with_preamble=with_preamble)


def fm0_decode(wave: Fm0Waveform) -> list[int]:
    """Recover bits from half-symbol levels (1 where halves agree)."""
    levels = wave.levels
    if len(levels) % 2 != 0:
        raise InvalidInputError("waveform must hold whole symbols")
    halves = levels.reshape(-1, 2)
    bits = (halves[:, 0] == halves[:, 1]).astype(int).tolist()
    if wave.with_preamble:
        bits = bits[len(PREAMBLE_BITS):]
    return bits


def count_boundary_violations(wave: Fm0Waveform) -> int:
    """Count symbol boundaries where the level fails to invert."""
    levels = wave.levels
    ends = levels[1:-1:2]
    starts = levels[2::2]
    return int(np.sum(ends == starts))


def longest_level_run(wave: Fm0Waveform) -> int:
    """Longest run of equal consecutive half-symbol levels."""
    levels = wave.levels
    change = np.flatnonzero(np.diff(levels) != 0)
    edges = np.concatenate(([-1], change, [len(levels) - 1]))
    return int(np.max(np.diff(edges)))


def sample_t1(rng: np.random.Generator) -> float:
    """Draw one reply delay T1 in seconds.

    Mass 0.9892 falls uniformly in the narrow band measured on real
    readers, [244, 247] us; the remainder spreads uniformly over the
    rest of the legal [238, 262] us range.
    """
    if rng.random() < T1_TYPICAL_MASS:
        return float(rng.uniform(T1_TYPICAL_LO_S, T1_TYPICAL_HI_S))
    lo_len = T1_TYPICAL_LO_S - T1_MIN_S
    hi_len = T1_MAX_S - T1_TYPICAL_HI_S
    if rng.random() < lo_len / (lo_len + hi_len):
        return float(rng.uniform(T1_MIN_S, T1_TYPICAL_LO_S))
    return float(rng.uniform(T1_TYPICAL_HI_S, T1_MAX_S))


@dataclass(frozen=True)
class Segment:
    label: str
    t_start_s: float
    t_end_s: float

    @property
    def duration_s(self) -> float:
        return self.t_end_s - self.t_start_s


@dataclass(frozen=True)
class RoundTimeline:
    """Ordered segments of one query round, times relative to round start."""

    segments: tuple
    rn16: Rn16Message
    timing: Gen2Timing
    cfg: Fm0Config

    @property
    def duration_s(self) -> float:
        return self.segments[-1].t_end_s

    def segment(self, label: str) -> Segment:
        for seg in self.segments:
            if seg.label == label:
                return seg
        raise KeyError(label)

    @property
    def query_end_s(self) -> float:
        return self.segment("query-cmd").t_end_s

    @property
    def reply_start_s(self) -> float:
        return self.segment("backscatter-window").t_start_s

    @property
    def reply_end_s(self) -> float:
        return self.segment("backscatter-window").t_end_s


def build_query_round(timing: Gen2Timing, rn16: Rn16Message, cfg: Fm0Config) -> RoundTimeline:
    """Lay out one rhythm-query round.

    Energy-harvest CW of length T4, the Query command, then CW spanning
    T1 + T_RN16 + T2. The tag reply occupies [T1, T1 + T_RN16] after the
    command ends.
    """
    t = 0.0
    segs = [Segment("cw-t4", t, t + timing.t4_s)]
    t += timing.t4_s
    segs.append(Segment("query-cmd", t, t + timing.query_cmd_s))
    t += timing.query_cmd_s
    cw_end = t + timing.t1_s + timing.t_rn16_s + timing.t2_s
    segs.append(Segment("cw", t, cw_end))
    segs.append(Segment("backscatter-window", t + timing.t1_s, t + timing.t1_s + timing.t_rn16_s))
    return RoundTimeline(segments=tuple(segs), rn16=rn16, timing=timing, cfg=cfg)


@dataclass(frozen=True)
class Marker:
    label: str
    t_start_s: float
    t_end_s: float


@dataclass(frozen=True)
class IqTrace:
    """Complex baseband samples of one round.

    Markers label time spans for test introspection only; nothing in the
    receive chain may read them.
    """

    sample_rate_hz: float
    t0_s: float
    samples: np.ndarray
    markers: tuple = ()

    def __post_init__(self):
        if len(self.samples) == 0:
            raise InvalidInputError("trace has no samples")
        if not np.all(np.isfinite(self.samples.view(np.float64))):
            raise InvalidInputError("trace has non-finite samples")
        t_end = self.t0_s + len(self.samples) / self.sample_rate_hz
        for m in self.markers:
            if m.t_start_s < self.t0_s - 1e-12 or m.t_end_s > t_end + 1e-12:
                raise InvalidInputError(f"marker {m.label} outside trace span")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.sample_rate_hz


@dataclass(frozen=True)
class ChannelModel:
    """Complex gains and geometry between reader, card, and receiver.

    The reader cancels its own transmit leakage, so the residual carrier
    it digitizes sits well below the backscatter return; ``cw_gain``
    models that residual. Noise is circularly symmetric Gaussian with
    power set by ``snr_db`` relative to the residual carrier.
    """

    cw_gain: complex = 0.05 + 0j
    bs_gain: complex = 10.0 + 0j
    d0_m: float = 0.973
    phi_reader: float = 0.7
    phi_card: float = 1.1
    snr_db: float = 30.0

    def noise_sigma(self) -> float:
        """Per-quadrature noise standard deviation."""
        cw_power = abs(self.cw_gain) ** 2
        noise_power = cw_power / (10.0 ** (self.snr_db / 10.0))
        return float(np.sqrt(noise_power / 2.0))

    def base_phase_at(self, carrier_hz: float) -> float:
        """Round-trip propagation plus circuit phase at one carrier."""
        from .channel import baseline_phase

        return baseline_phase(self.d0_m, carrier_hz, self.phi_reader, self.phi_card)


def synthesize_round(
    timeline: RoundTimeline,
    cw_phase_fn: Callable[[np.ndarray], np.ndarray],
    channel: ChannelModel,
    tap_phase_fn: Callable[[np.ndarray], np.ndarray],
    cfg: Fm0Config,
    carrier_hz: float,
    rng: np.random.Generator | None = None,
    t0_s: float = 0.0,
) -> IqTrace:
    """Render one round to complex baseband.

    Outside the reply's high half-symbols each sample is the carrier
    alone (state S1). Inside them the backscatter term adds, carrying
    the propagation baseline plus the tap rotation (state S2). Both
    terms share the instantaneous CW phase, which ``cw_phase_fn`` maps
    from time-within-round to radians.
    """
    fs = cfg.sample_rate_hz
    n = int(round(timeline.duration_s * fs))
    t_local = np.arange(n) / fs
    t_abs = t0_s + t_local

    theta = np.asarray(cw_phase_fn(t_local), dtype=float)
    cw = channel.cw_gain * np.exp(1j * theta)

    wave = fm0_encode(timeline.rn16.data_bits, cfg, with_preamble=True)
    reply_t = t_local - timeline.reply_start_s
    backscattering = wave.level_at(reply_t).astype(bool)

    psi = channel.base_phase_at(carrier_hz) + np.asarray(tap_phase_fn(t_abs), dtype=float)
    samples = cw.astype(complex)
    samples[backscattering] += channel.bs_gain * np.exp(1j * (theta + psi))[backscattering]

    if rng is not None:
        sigma = channel.noise_sigma()
        if sigma > 0:
            samples = samples + rng.normal(0.0, sigma, n) + 1j * rng.normal(0.0, sigma, n)

    markers = tuple(
        Marker(seg.label, t0_s + seg.t_start_s, t0_s + seg.t_end_s) for seg in timeline.segments
    )
    return IqTrace(sample_rate_hz=fs, t0_s=t0_s, samples=samples, markers=markers)


def split_states(trace: IqTrace, timeline: RoundTimeline) -> tuple[np.ndarray, np.ndarray]:
    """Split a round's samples into S1 and S2 sets.

    S1 collects the CW-only spans the reader actually uses: the T1 gap,
    the low half-symbols of the reply, and the T2 guard. The command and
    harvest segments are excluded (modulated or transient on hardware).
    """
    fs = trace.sample_rate_hz
    t_local = np.arange(len(trace.samples)) / fs
    wave = fm0_encode(timeline.rn16.data_bits, timeline.cfg, with_preamble=True)
    reply_t = t_local - timeline.reply_start_s
    s2_mask = wave.level_at(reply_t).astype(bool)
    cw_seg = timeline.segment("cw")
    in_cw = (t_local >= cw_seg.t_start_s) & (t_local < cw_seg.t_end_s)
    s1_mask = in_cw & ~s2_mask
    return trace.samples[s1_mask], trace.samples[s2_mask]


# ---------------------------------------------------------------------------
# Trace file format: header line then CSV rows, markers in a JSON sidecar.

def write_iqtrace(trace: IqTrace, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# iqtrace v1 sample_rate={trace.sample_rate_hz:.9g} t0={trace.t0_s:.9g}\n")
        for s in trace.samples:
            fh.write(f"{s.real:.12g},{s.imag:.12g}\n")
    sidecar = path.with_suffix(path.suffix + ".markers.json")
    payload = {
        "markers": [
            {"label": m.label, "t_start": m.t_start_s, "t_end": m.t_end_s}
            for m in trace.markers
        ]
    }
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def read_iqtrace(path: str | Path) -> IqTrace:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("# iqtrace v1"):
            raise InvalidInputError(f"not an iqtrace file: {path}")
        fields = dict(part.split("=") for part in header.split()[2:])
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    samples = rows[:, 0] + 1j * rows[:, 1]
    markers = ()
    sidecar = path.with_suffix(path.suffix + ".markers.json")
    if sidecar.exists():
        data = json.loads(sidecar.read_text())
        markers = tuple(
            Marker(m["label"], float(m["t_start"]), float(m["t_end"]))
            for m in data.get("markers", [])
        )
    return IqTrace(
        sample_rate_hz=float(fields["sample_rate"]),
        t0_s=float(fields["t0"]),
        samples=samples,
        markers=markers,
    )
