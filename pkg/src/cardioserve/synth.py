"""Synthetic ECG generator: Gaussian-bump beat trains with controllable
rhythm regularity, used for desk-scale training and evaluation."""

from dataclasses import dataclass

import numpy as np

from .cardionet import DEFAULT_LABELS
from .ecg import EcgRecording, LeadId

# Wave timing relative to the R peak.
_P_OFFSET_S = -0.140
_T_OFFSET_S = 0.280
_FIRST_BEAT_S = 0.400
_END_MARGIN_S = 0.200
_MIN_RR_S = 0.050  # hard floor so peak indices stay strictly increasing


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticBeatSpec:
    """Beat-train shape: rhythm class, RR statistics, and per-wave Gaussian
    amplitude (mV) / width (standard deviation, ms)."""

    rhythm: str  # "sinus" | "af_like"
    mean_rr_ms: float = 800.0
    rr_jitter: float = 0.05  # coefficient of variation of RR
    p_amplitude_mv: float = 0.15
    p_width_ms: float = 25.0
    qrs_amplitude_mv: float = 1.2
    qrs_width_ms: float = 12.0
    t_amplitude_mv: float = 0.30
    t_width_ms: float = 55.0
    noise_std_mv: float = 0.02

    def __post_init__(self):
        if self.rhythm not in ("sinus", "af_like"):
            raise SpecError(f"unknown rhythm {self.rhythm!r}")
        if self.mean_rr_ms <= 0:
            raise SpecError("mean_rr_ms must be positive")
        if self.rr_jitter < 0 or self.noise_std_mv < 0:
            raise SpecError("rr_jitter and noise_std_mv must be non-negative")
        if self.rhythm == "sinus" and self.p_amplitude_mv <= 0:
            raise SpecError("sinus rhythm requires a positive P-wave amplitude")
        if self.rhythm == "af_like":
            if self.p_amplitude_mv != 0:
                raise SpecError("af_like rhythm must have zero P-wave amplitude")
            if self.rr_jitter < 0.2:
                raise SpecError("af_like rhythm requires rr_jitter >= 0.2")


def sinus_spec(**overrides) -> SyntheticBeatSpec:
    return SyntheticBeatSpec(rhythm="sinus", **overrides)


def af_spec(**overrides) -> SyntheticBeatSpec:
    # AF presents with a rapid, irregular ventricular response and no P waves.
    overrides.setdefault("mean_rr_ms", 450.0)
    overrides.setdefault("rr_jitter", 0.25)
    overrides.setdefault("p_amplitude_mv", 0.0)
    return SyntheticBeatSpec(rhythm="af_like", **overrides)


def _beat_times(spec: SyntheticBeatSpec, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    mean_rr_s = spec.mean_rr_ms / 1000.0
    times = []
    t = _FIRST_BEAT_S
    limit = duration_s - _END_MARGIN_S
    while t < limit:
        times.append(t)
        z = float(np.clip(rng.standard_normal(), -3.0, 3.0))
        rr = mean_rr_s * (1.0 + spec.rr_jitter * z)
        t += max(rr, _MIN_RR_S)
    return np.asarray(times)


def _gaussian_train(t_grid: np.ndarray, centers: np.ndarray, amplitude: float, width_ms: float) -> np.ndarray:
    if amplitude == 0.0 or centers.size == 0:
        return np.zeros_like(t_grid)
    sigma = width_ms / 1000.0
    out = np.zeros_like(t_grid)
    half = 5.0 * sigma
    for c in centers:
        lo = np.searchsorted(t_grid, c - half)
        hi = np.searchsorted(t_grid, c + half)
        window = t_grid[lo:hi] - c
        out[lo:hi] += amplitude * np.exp(-0.5 * (window / sigma) ** 2)
    return out


def waveform_mv(spec: SyntheticBeatSpec, duration_s: float, rate_hz: float,
                seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Lead-I millivolt waveform plus the ground-truth R-peak times (s)."""
    if duration_s < 2.0:
        raise SpecError("recordings must be at least 2 s long")
    rng = np.random.default_rng(seed)
    beats = _beat_times(spec, duration_s, rng)
    n = int(round(duration_s * rate_hz))
    t_grid = np.arange(n) / rate_hz

    mv = _gaussian_train(t_grid, beats, spec.qrs_amplitude_mv, spec.qrs_width_ms)
    mv += _gaussian_train(t_grid, beats + _P_OFFSET_S, spec.p_amplitude_mv, spec.p_width_ms)
    mv += _gaussian_train(t_grid, beats + _T_OFFSET_S, spec.t_amplitude_mv, spec.t_width_ms)
    if spec.noise_std_mv > 0:
        mv += rng.normal(0.0, spec.noise_std_mv, size=n)
    return mv, beats


def label_vector(spec: SyntheticBeatSpec, vocabulary=DEFAULT_LABELS) -> np.ndarray:
    code = "NSR" if spec.rhythm == "sinus" else "AF"
    return np.array([1.0 if c == code else 0.0 for c, _ in vocabulary])


def generate_recording(spec: SyntheticBeatSpec, duration_s: float, rate_hz: float, seed: int,
                       adc_gain: float = 200.0, baseline: float = 0.0,
                       vocabulary=DEFAULT_LABELS) -> tuple[EcgRecording, np.ndarray, np.ndarray]:
    """Deterministic single-lead recording with its truth labels and true
    R-peak sample indices."""
    mv, beats = waveform_mv(spec, duration_s, rate_hz, seed)
    raw = mv * adc_gain + baseline
    rec = EcgRecording(sample_rate_hz=rate_hz, adc_gain=adc_gain, baseline=baseline,
                       leads={LeadId.I: raw})
    r_indices = np.round(beats * rate_hz).astype(np.int64)
    return rec, label_vector(spec, vocabulary), r_indices


# Rough projection factors of the lead-I waveform onto the other independent
# leads, enough to exercise 12-lead routing with consistent limb leads.
_LEAD_SCALES = {
    LeadId.II: 1.2,
    LeadId.V1: -0.4,
    LeadId.V2: 0.5,
    LeadId.V3: 0.9,
    LeadId.V4: 1.1,
    LeadId.V5: 1.0,
    LeadId.V6: 0.8,
}


def generate_twelve_lead(spec: SyntheticBeatSpec, duration_s: float, rate_hz: float, seed: int,
                         adc_gain: float = 200.0, baseline: float = 0.0,
                         vocabulary=DEFAULT_LABELS) -> tuple[EcgRecording, np.ndarray, np.ndarray]:
    """Twelve-lead variant: scaled copies of the base waveform with limb leads
    derived so the recording passes lead-consistency checks."""
    mv, beats = waveform_mv(spec, duration_s, rate_hz, seed)
    leads_mv = {LeadId.I: mv}
    for lead, scale in _LEAD_SCALES.items():
        leads_mv[lead] = mv * scale
    i, ii = leads_mv[LeadId.I], leads_mv[LeadId.II]
    leads_mv[LeadId.III] = ii - i
    leads_mv[LeadId.aVR] = -(i + ii) / 2.0
    leads_mv[LeadId.aVL] = i - ii / 2.0
    leads_mv[LeadId.aVF] = ii - i / 2.0

    raw = {lead: v * adc_gain + baseline for lead, v in leads_mv.items()}
    rec = EcgRecording(sample_rate_hz=rate_hz, adc_gain=adc_gain, baseline=baseline, leads=raw)
    r_indices = np.round(beats * rate_hz).astype(np.int64)
    return rec, label_vector(spec, vocabulary), r_indices
