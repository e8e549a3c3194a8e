"""The reader's receive chain.

Phase extraction from S1/S2 symbol clusters, the periodic phase-report
stream, and the processing pipeline that turns raw reports into the
smoothed time-normalized phase-difference series the rhythm stages
consume: difference and unwrap, normalize by the report interval,
repair hop discontinuities, then interpolate and average-filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError

DEFAULT_ETA = 3.5
DEFAULT_REPORT_INTERVAL_S = 0.004
DEFAULT_REPORT_JITTER_S = 0.0005
DEFAULT_INTERP_FACTOR = 4
DEFAULT_FILTER_LEN = 15
CENTROID_EPS = 1e-9


@dataclass(frozen=True)
class PhaseReport:
    """One reader phase report: phase, carrier frequency, timestamp."""

    phi_rad: float
    freq_hz: float
    t_s: float

    def __post_init__(self):
        if not 0.0 <= self.phi_rad < 2.0 * np.pi:
            raise InvalidInputError(f"phi_rad {self.phi_rad} outside [0, 2pi)")


@dataclass
class ProcessedSeries:
    """Smoothed phase-difference series on a uniform time grid."""

    values: np.ndarray
    timestamps: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if self.values.shape != self.timestamps.shape:
            raise InvalidInputError("values and timestamps differ in length")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("series holds non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def extract_phase(s1_samples: np.ndarray, s2_samples: np.ndarray) -> float:
    """Backscatter phase from the two symbol clusters.

    Takes the angle between the S2 and S1 centroid vectors in the I-Q
    plane: arccos of their normalized dot product, in [0, pi].
    """
    s1 = np.asarray(s1_samples, dtype=complex)
    s2 = np.asarray(s2_samples, dtype=complex)
    if s1.size == 0 or s2.size == 0:
        raise InvalidInputError("both clusters must be non-empty")
    v_l = s1.mean()
    v_b = s2.mean()
    if abs(v_l) < CENTROID_EPS or abs(v_b) < CENTROID_EPS:
        raise DegenerateGeometryError("cluster centroid within eps of origin")
    cos = (v_b * v_l.conjugate()).real / (abs(v_b) * abs(v_l))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def extract_phase_many(v_l: np.ndarray, v_b: np.ndarray) -> np.ndarray:
    """Vectorized centroid-angle extraction (one pair per element)."""
    v_l = np.asarray(v_l, dtype=complex)
    v_b = np.asarray(v_b, dtype=complex)
    mag = np.abs(v_b) * np.abs(v_l)
    if np.any(np.abs(v_l) < CENTROID_EPS) or np.any(np.abs(v_b) < CENTROID_EPS):
        raise DegenerateGeometryError("cluster centroid within eps of origin")
    cos = (v_b * v_l.conjugate()).real / mag
    return np.arccos(np.clip(cos, -1.0, 1.0))


def report_times(
    duration_s: float,
    rng: np.random.Generator,
    interval_s: float = DEFAULT_REPORT_INTERVAL_S,
    jitter_s: float = DEFAULT_REPORT_JITTER_S,
) -> np.ndarray:
    """Report timestamps: nominal interval with uniform jitter per step."""
    if duration_s <= 0:
        raise InvalidInputError("duration_s must be positive")
    steps = rng.uniform(interval_s - jitter_s, interval_s + jitter_s, int(duration_s / (interval_s - jitter_s)) + 2)
    times = np.cumsum(steps)
    return times[times < duration_s]


def report_stream(
    rounds: Sequence,
    rng: np.random.Generator,
    interval_s: float = DEFAULT_REPORT_INTERVAL_S,
    jitter_s: float = DEFAULT_REPORT_JITTER_S,
) -> list[PhaseReport]:
    """Turn synthesized rounds into a phase-report stream.

    ``rounds`` holds (trace, timeline, carrier_hz) triples ordered in
    time. One report is emitted per report interval, pooling the S1/S2
    clusters of every round that completed inside that interval. Rounds
    with degenerate cluster geometry are dropped and leave a gap.
    """
    from .phy import split_states

    if not rounds:
        return []
    ends = np.array([trace.t0_s + trace.duration_s for trace, _, _ in rounds])
    duration = float(ends[-1])
    times = report_times(duration, rng, interval_s, jitter_s)

    reports: list[PhaseReport] = []
    prev_t = 0.0
    for t in times:
        sel = np.flatnonzero((ends > prev_t) & (ends <= t))
        prev_t = t
        if sel.size == 0:
            continue
        s1_parts, s2_parts = [], []
        freq = None
        for k in sel:
            trace, timeline, carrier_hz = rounds[k]
            s1, s2 = split_states(trace, timeline)
            s1_parts.append(s1)
            s2_parts.append(s2)
            freq = carrier_hz
        try:
            phi = extract_phase(np.concatenate(s1_parts), np.concatenate(s2_parts))
        except DegenerateGeometryError:
            continue
        reports.append(PhaseReport(phi_rad=phi, freq_hz=float(freq), t_s=float(t)))
    return reports


def diff_unwrap(phi_i: float, phi_prev: float, eta: float = DEFAULT_ETA) -> float:
    """Unwrapped phase difference between consecutive reports.

    Tap-induced change stays below pi, so a jump beyond ``eta`` marks a
    2pi wrap rather than motion.
    """
    d = phi_i - phi_prev
    if d < -eta:
        return d + 2.0 * np.pi
    if d > eta:
        return d - 2.0 * np.pi
    return d


def normalize(delta_phi: float, dt_s: float) -> float:
    """Time-normalized phase difference, rad/s."""
    if dt_s <= 0:
        raise InvalidInputError("dt_s must be positive")
    return delta_phi / dt_s


@dataclass
class RawSeries:
    """Normalized differences before interpolation, with hop metadata."""

    values: np.ndarray
    timestamps: np.ndarray
    freqs: np.ndarray


def difference_series(reports: Sequence[PhaseReport], eta: float = DEFAULT_ETA) -> RawSeries:
    """Per-report unwrapped, time-normalized differences.

    Entry i carries the difference between reports i+1 and i, stamped at
    the later report's time, with that report's carrier frequency.
    """
    if len(reports) < 2:
        raise InvalidInputError("need at least two reports")
    phis = np.array([r.phi_rad for r in reports])
    times = np.array([r.t_s for r in reports])
    freqs = np.array([r.freq_hz for r in reports])
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("report timestamps must be strictly increasing")
    values = np.empty(len(reports) - 1)
    for i in range(1, len(reports)):
        values[i - 1] = normalize(diff_unwrap(phis[i], phis[i - 1], eta), times[i] - times[i - 1])
    return RawSeries(values=values, timestamps=times[1:], freqs=freqs[1:])


def hop_calibrate(series: RawSeries, prev_freqs: np.ndarray | None = None) -> tuple[RawSeries, dict]:
    """Repair the differences that straddle a carrier hop.

    At every index whose frequency differs from its predecessor's the
    propagation baseline shifted, so the measured difference is replaced
    by the neighbor estimate
    (v[i+1] + v[i-1]) * (t[i] - t[i-1]) / (t[i+1] - t[i-1]).
    A hop at the series edge takes its single valid neighbor. A hop
    immediately after another is repaired against the already-corrected
    value and flagged in the diagnostics.
    """
    values = series.values.copy()
    times = series.timestamps
    freqs = series.freqs
    if prev_freqs is None:
        prev = np.concatenate(([freqs[0]], freqs[:-1]))
    else:
        prev = np.asarray(prev_freqs)
    hop_idx = np.flatnonzero(freqs != prev)
    consecutive = []
    raw = series.values
    for i in hop_idx:
        left = values[i - 1] if i - 1 >= 0 else None
        right = raw[i + 1] if i + 1 < len(raw) else None
        if i + 1 in set(hop_idx) and right is not None:
            right = None  # next value is itself corrupted; lean on the left
        if left is not None and right is not None:
            values[i] = (right + left) * (times[i] - times[i - 1]) / (times[i + 1] - times[i - 1])
        elif left is not None:
            values[i] = left
        elif right is not None:
            values[i] = right
        if i - 1 in set(hop_idx):
            consecutive.append(int(i))
    diag = {"hop_indices": [int(i) for i in hop_idx], "consecutive_hops": consecutive}
    return RawSeries(values=values, timestamps=times, freqs=freqs), diag


def average_filter(values: np.ndarray, length: int = DEFAULT_FILTER_LEN) -> np.ndarray:
    """Centered moving average with a shrinking symmetric window at edges."""
    if length % 2 != 1 or length < 1:
        raise InvalidInputError("filter length must be odd and positive")
    values = np.asarray(values, dtype=float)
    n = len(values)
    half = length // 2
    cums = np.concatenate(([0.0], np.cumsum(values)))
    idx = np.arange(n)
    h = np.minimum(np.minimum(idx, n - 1 - idx), half)
    lo = idx - h
    hi = idx + h + 1
    return (cums[hi] - cums[lo]) / (hi - lo)


def interpolate_filter(
    series: RawSeries,
    interp_factor: int = DEFAULT_INTERP_FACTOR,
    filter_len: int = DEFAULT_FILTER_LEN,
) -> ProcessedSeries:
    """Resample onto a denser uniform grid, then smooth.

    Linear interpolation by ``interp_factor`` onto a closed uniform grid
    (n input points become factor*(n-1)+1), followed by the centered
    moving average.
    """
    n = len(series.values)
    if n < filter_len:
        raise InvalidInputError(f"series length {n} < filter length {filter_len}")
    grid = np.linspace(series.timestamps[0], series.timestamps[-1], interp_factor * (n - 1) + 1)
    dense = np.interp(grid, series.timestamps, series.values)
    smooth = average_filter(dense, filter_len)
    return ProcessedSeries(
        values=smooth,
        timestamps=grid,
        meta={"interp_factor": interp_factor, "filter_len": filter_len},
    )


def process_reports(
    reports: Sequence[PhaseReport],
    eta: float = DEFAULT_ETA,
    interp_factor: int = DEFAULT_INTERP_FACTOR,
    filter_len: int = DEFAULT_FILTER_LEN,
) -> ProcessedSeries:
    """Full pipeline from phase reports to the smoothed series."""
    raw = difference_series(reports, eta)
    calibrated, diag = hop_calibrate(raw)
    out = interpolate_filter(calibrated, interp_factor, filter_len)
    out.meta.update(diag)
    return out


def resample_uniform(series: ProcessedSeries, grid_hz: float) -> ProcessedSeries:
    """Linear resample onto a uniform grid of the given rate."""
    if grid_hz <= 0:
        raise InvalidInputError("grid_hz must be positive")
    t0, t1 = series.timestamps[0], series.timestamps[-1]
    n = max(int(round((t1 - t0) * grid_hz)), 2)
    grid = t0 + np.arange(n) / grid_hz
    values = np.interp(grid, series.timestamps, series.values)
    return ProcessedSeries(values=values, timestamps=grid, meta=dict(series.meta))


# ---------------------------------------------------------------------------
# CSV formats. The report CSV doubles as the ingestion format for
# externally captured traces.

def write_reports_csv(reports: Sequence[PhaseReport], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t_s,phi_rad,freq_hz\n")
        for r in reports:
            fh.write(f"{r.t_s:.9g},{r.phi_rad:.9g},{r.freq_hz:.9g}\n")
    return path


def read_reports_csv(path: str | Path) -> list[PhaseReport]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != "t_s,phi_rad,freq_hz":
            raise InvalidInputError(f"unexpected report header: {header!r}")
        reports = []
        for line in fh:
            t, phi, freq = line.strip().split(",")
            reports.append(PhaseReport(phi_rad=float(phi), freq_hz=float(freq), t_s=float(t)))
    return reports


def write_series_csv(series: ProcessedSeries, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t_s,dphi_rad_per_s\n")
        for t, v in zip(series.timestamps, series.values):
            fh.write(f"{t:.9g},{v:.9g}\n")
    return path


def read_series_csv(path: str | Path) -> ProcessedSeries:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ProcessedSeries(values=data[:, 1], timestamps=data[:, 0])
