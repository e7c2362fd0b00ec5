"""Signal conditioning: resampling, zero-phase band-pass filtering,
segmentation, R-peak detection and RR-interval measurements."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig

from .ecg import DomainError, LeadId, PhysicalSignal

MODEL_RATE_HZ = 250.0
SEGMENT_SECONDS = 2.0


class SignalError(DomainError):
    """Signal does not meet an operation's preconditions."""


class NotEnoughBeats(SignalError):
    """Fewer than two R peaks: RR statistics are undefined."""


@dataclass(frozen=True)
class FilterSpec:
    """Cascaded Butterworth band edges, applied zero-phase (forward + reverse).

    Defaults are the standard ECG monitoring band: 0.5 Hz high-pass removes
    baseline wander, 40 Hz low-pass removes high-frequency noise.
    """

    highpass_cutoff_hz: float = 0.5
    highpass_order: int = 2
    lowpass_cutoff_hz: float = 40.0
    lowpass_order: int = 4

    def validate(self, sample_rate_hz: float):
        if self.highpass_order < 1 or self.lowpass_order < 1:
            raise SignalError("filter orders must be positive")
        nyquist = sample_rate_hz / 2.0
        if not (0 < self.highpass_cutoff_hz < self.lowpass_cutoff_hz < nyquist):
            raise SignalError(
                f"need 0 < highpass ({self.highpass_cutoff_hz} Hz) < lowpass "
                f"({self.lowpass_cutoff_hz} Hz) < Nyquist ({nyquist} Hz)"
            )


@dataclass(frozen=True)
class SegmentBatch:
    """Stack of equal-length windows: (num_segments, channels, segment_length)."""

    segments: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64)
        if seg.ndim != 3:
            raise SignalError(f"segments must be 3-axis, got shape {seg.shape}")
        if seg.shape[0] < 1:
            raise SignalError("need at least one segment")
        object.__setattr__(self, "segments", seg)

    @property
    def num_segments(self) -> int:
        return self.segments.shape[0]

    @property
    def channels(self) -> int:
        return self.segments.shape[1]

    @property
    def segment_length(self) -> int:
        return self.segments.shape[2]


@dataclass(frozen=True)
class RrMeasurements:
    heart_rate_bpm: float
    rr_mean_ms: float
    rr_std_ms: float
    r_peak_indices: tuple[int, ...]


def resample(sig: PhysicalSignal, target_hz: float) -> PhysicalSignal:
    """Linear-interpolation resampling onto a uniform grid at target_hz.

    Output length is round(n * target / source).  When upsampling, output
    instants past the final input sample hold its value.
    """
    if not (50.0 <= target_hz <= 2000.0):
        raise SignalError(f"target rate must be in [50, 2000] Hz, got {target_hz}")
    n = sig.num_samples
    if n < 2:
        raise SignalError("resampling needs at least 2 samples")
    if target_hz == sig.sample_rate_hz:
        return sig

    m = int(round(n * target_hz / sig.sample_rate_hz))
    src_t = np.arange(n) / sig.sample_rate_hz
    dst_t = np.arange(m) / target_hz
    channels = tuple(
        (lead, np.interp(dst_t, src_t, values)) for lead, values in sig.channels
    )
    return PhysicalSignal(sample_rate_hz=target_hz, channels=channels)


def _bandpass_sos(spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    spec.validate(sample_rate_hz)
    hp = _sig.butter(spec.highpass_order, spec.highpass_cutoff_hz,
                     btype="highpass", fs=sample_rate_hz, output="sos")
    lp = _sig.butter(spec.lowpass_order, spec.lowpass_cutoff_hz,
                     btype="lowpass", fs=sample_rate_hz, output="sos")
    return np.vstack([hp, lp])


def bandpass(sig: PhysicalSignal, spec: FilterSpec = FilterSpec()) -> PhysicalSignal:
    """Zero-phase band-pass: the Butterworth cascade run forward then reverse,
    preserving length and QRS phase."""
    sos = _bandpass_sos(spec, sig.sample_rate_hz)
    # sosfiltfilt needs enough samples to build its edge padding.
    pad = 3 * (2 * sos.shape[0] + 1)
    if sig.num_samples <= pad:
        raise SignalError(f"signal too short to filter: {sig.num_samples} samples, need > {pad}")
    channels = tuple(
        (lead, _sig.sosfiltfilt(sos, values)) for lead, values in sig.channels
    )
    return PhysicalSignal(sample_rate_hz=sig.sample_rate_hz, channels=channels)


def segment(sig: PhysicalSignal, segment_seconds: float = SEGMENT_SECONDS) -> SegmentBatch:
    """Cut into non-overlapping windows of round(segment_seconds * rate)
    samples, zero-padding the final partial window."""
    window = int(round(segment_seconds * sig.sample_rate_hz))
    if window < 1:
        raise SignalError(f"segment of {segment_seconds} s is 0 samples at {sig.sample_rate_hz} Hz")
    n = sig.num_samples
    if n < 1:
        raise SignalError("cannot segment an empty signal")
    data = sig.matrix()
    num_segments = math.ceil(n / window)
    padded = np.zeros((data.shape[0], num_segments * window))
    padded[:, :n] = data
    segments = padded.reshape(data.shape[0], num_segments, window).transpose(1, 0, 2)
    return SegmentBatch(segments=segments, sample_rate_hz=sig.sample_rate_hz)


def concatenate_segments(batch: SegmentBatch, original_length: int) -> np.ndarray:
    """Undo segment(): stitch windows back together and drop tail padding."""
    joined = batch.segments.transpose(1, 0, 2).reshape(batch.channels, -1)
    return joined[:, :original_length]


# Pan-Tompkins-style constants.
_QRS_BAND_HZ = (5.0, 15.0)
_INTEGRATION_WINDOW_S = 0.150
_REFRACTORY_S = 0.200
_THRESHOLD_FRACTION = 0.5
_PEAK_EMA = 0.125  # weight of a new peak in the running peak estimate
_SEARCH_BACK_S = 0.100  # half-window for refining R onto the filtered signal


def detect_r_peaks(lead: PhysicalSignal) -> np.ndarray:
    """Detect QRS complexes on a single-channel signal.

    Pipeline: 5-15 Hz band-pass, derivative, squaring, 150 ms moving-window
    integration, then an adaptive threshold at half the running peak estimate
    with a 200 ms refractory period.  Returns ascending sample indices.
    """
    if len(lead.channels) != 1:
        raise SignalError(f"expected a single channel, got {len(lead.channels)}")
    fs = lead.sample_rate_hz
    if fs < 100.0:
        raise SignalError(f"R-peak detection needs >= 100 Hz, got {fs} Hz")
    x = lead.channels[0][1]
    if x.shape[0] < 2 * fs:
        raise SignalError("R-peak detection needs at least 2 s of signal")

    sos = _sig.butter(2, _QRS_BAND_HZ, btype="bandpass", fs=fs, output="sos")
    filtered = _sig.sosfiltfilt(sos, x)
    derivative = np.gradient(filtered)
    squared = derivative * derivative
    win = max(1, int(round(_INTEGRATION_WINDOW_S * fs)))
    integrated = np.convolve(squared, np.ones(win) / win, mode="same")

    peak_floor = 1e-9 * max(1.0, float(np.max(np.abs(x))) ** 2)
    if float(np.max(integrated)) <= peak_floor:
        return np.array([], dtype=np.int64)

    refractory = int(round(_REFRACTORY_S * fs))
    # Candidate fiducial marks: local maxima of the integrated energy.
    candidates = _sig.argrelmax(integrated, order=max(1, win // 2))[0]
    if candidates.size == 0:
        return np.array([], dtype=np.int64)

    # Seed the running peak estimate from the first two seconds.
    peak_estimate = float(np.max(integrated[: int(2 * fs)]))
    accepted: list[int] = []
    last = -refractory - 1
    for idx in candidates:
        value = integrated[idx]
        if value <= peak_floor:
            continue
        if idx - last <= refractory:
            continue
        if value >= _THRESHOLD_FRACTION * peak_estimate:
            accepted.append(int(idx))
            last = int(idx)
            peak_estimate = _PEAK_EMA * float(value) + (1 - _PEAK_EMA) * peak_estimate

    # Refine each mark to the absolute maximum of the QRS-band signal nearby.
    half = int(round(_SEARCH_BACK_S * fs))
    refined = []
    for idx in accepted:
        lo = max(0, idx - half)
        hi = min(x.shape[0], idx + half + 1)
        refined.append(lo + int(np.argmax(np.abs(filtered[lo:hi]))))
    refined = sorted(set(refined))

    # Refinement can collapse neighbours; enforce the refractory period again.
    final: list[int] = []
    for idx in refined:
        if final and idx - final[-1] <= refractory:
            if np.abs(filtered[idx]) > np.abs(filtered[final[-1]]):
                final[-1] = idx
            continue
        final.append(idx)
    return np.asarray(final, dtype=np.int64)


def rr_measurements(peaks, rate_hz: float) -> RrMeasurements:
    """Heart rate and RR statistics from consecutive peak differences."""
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size < 2:
        raise NotEnoughBeats(f"need at least 2 peaks, got {peaks.size}")
    if np.any(np.diff(peaks) <= 0):
        raise SignalError("peak indices must be strictly increasing")
    rr_ms = np.diff(peaks) * (1000.0 / rate_hz)
    mean = float(np.mean(rr_ms))
    std = float(np.std(rr_ms))  # population standard deviation
    return RrMeasurements(
        heart_rate_bpm=60000.0 / mean,
        rr_mean_ms=mean,
        rr_std_ms=std,
        r_peak_indices=tuple(int(p) for p in peaks),
    )


def measure_rhythm(sig: PhysicalSignal) -> RrMeasurements | None:
    """RR measurements from lead I of an already-filtered signal, or None when
    the rhythm cannot be established (too short, too quiet, single beat)."""
    try:
        lead_i = sig.lead(LeadId.I)
    except DomainError:
        return None
    single = PhysicalSignal(sample_rate_hz=sig.sample_rate_hz,
                            channels=((LeadId.I, lead_i),))
    try:
        peaks = detect_r_peaks(single)
        return rr_measurements(peaks, sig.sample_rate_hz)
    except SignalError:
        return None
