"""Positive-sample generation: time offset, reverberation, noise mixing, SpecAugment.

All randomness is drawn from an explicit ``numpy.random.Generator`` so a
single seeded generator reproduces a whole augmentation stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .config import AugmentConfig, FrontendConfig
from .errors import (
    EmptyInputError,
    OffsetOutOfBoundsError,
    SilentSignalError,
)
from .frontend import AudioSegment, Waveform, log_mel, mean_power

# ln(1000): amplitude decays by 60 dB over t60
DECAY_60DB = 6.907755278982137


@dataclass(frozen=True)
class NoiseClip:
    samples: np.ndarray
    sample_rate: int


@dataclass(frozen=True)
class RoomImpulseResponse:
    taps: np.ndarray
    sample_rate: int
    t60: float = 0.0


@dataclass(frozen=True)
class OffsetSegment:
    segment: AudioSegment
    delta: float


def time_offset_segment(
    track: Waveform,
    start: float,
    fe: FrontendConfig,
    aug: AugmentConfig,
    rng: np.random.Generator | None = None,
    delta: float | None = None,
    track_id: int = 0,
) -> OffsetSegment:
    """Cut the L-length window at ``start + delta``.

    ``delta`` is drawn uniformly from +-max_offset_fraction * H unless given.
    Raises OffsetOutOfBoundsError when the shifted window leaves the track.
    """
    if delta is None:
        bound = aug.max_offset_fraction * fe.hop_seconds
        delta = float(rng.uniform(-bound, bound)) if bound > 0 else 0.0
    first = int(round((start + delta) * fe.sample_rate))
    n = fe.segment_samples
    if first < 0 or first + n > len(track.samples):
        raise OffsetOutOfBoundsError(
            f"window at {start + delta:.4f}s does not fit in a {track.duration:.3f}s track"
        )
    seg = AudioSegment(track.samples[first : first + n], track_id, first / fe.sample_rate)
    return OffsetSegment(seg, delta)


def noise_window(noise: NoiseClip, length: int, rng: np.random.Generator | None = None,
                 offset: int | None = None) -> np.ndarray:
    if len(noise.samples) < length:
        raise ValueError(f"noise clip has {len(noise.samples)} samples, need {length}")
    if offset is None:
        offset = int(rng.integers(0, len(noise.samples) - length + 1)) if rng is not None else 0
    return np.asarray(noise.samples[offset : offset + length], dtype=np.float64)


def noise_gain(signal_rms: float, noise_rms: float, snr_db: float) -> float:
    return signal_rms / (noise_rms * 10.0 ** (snr_db / 20.0))


def mix_noise(
    seg: np.ndarray,
    noise: NoiseClip | np.ndarray,
    snr_db: float,
    rng: np.random.Generator | None = None,
    offset: int | None = None,
) -> np.ndarray:
    """Add a noise window scaled so that P(seg) / P(scaled noise) = snr_db."""
    x = np.asarray(seg, dtype=np.float64)
    if isinstance(noise, NoiseClip):
        n = noise_window(noise, len(x), rng, offset)
    else:
        n = np.asarray(noise, dtype=np.float64)[: len(x)]
        if len(n) < len(x):
            raise ValueError("noise shorter than segment")
    p_sig, p_noise = mean_power(x), mean_power(n)
    if p_noise == 0.0:
        raise SilentSignalError("noise window has zero power")
    if p_sig == 0.0:
        raise SilentSignalError("segment has zero power; SNR undefined")
    g = noise_gain(np.sqrt(p_sig), np.sqrt(p_noise), snr_db)
    return x + g * n


def measured_snr(clean: np.ndarray, scaled_noise: np.ndarray) -> float:
    return 10.0 * np.log10(mean_power(clean) / mean_power(scaled_noise))


def apply_reverb(x: np.ndarray, rir: RoomImpulseResponse | np.ndarray) -> np.ndarray:
    """Convolve with the peak-normalized RIR, truncated to the input length."""
    taps = np.asarray(rir.taps if isinstance(rir, RoomImpulseResponse) else rir, dtype=np.float64)
    if taps.size == 0:
        raise EmptyInputError("empty impulse response")
    peak = np.max(np.abs(taps))
    if peak == 0:
        raise SilentSignalError("impulse response is all zeros")
    x = np.asarray(x, dtype=np.float64)
    return signal.convolve(x, taps / peak, mode="full")[: len(x)]


def spec_augment(spec: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Fill ``freq_masks`` row bands and ``time_masks`` column bands with the spectrogram mean."""
    out = np.array(spec, copy=True)
    n_f, n_t = out.shape
    fill = spec.mean()
    wf = int(round(aug.mask_width_fraction * n_f))
    wt = int(round(aug.mask_width_fraction * n_t))
    for _ in range(aug.freq_masks):
        f0 = int(rng.integers(0, n_f - wf + 1))
        out[f0 : f0 + wf, :] = fill
    for _ in range(aug.time_masks):
        t0 = int(rng.integers(0, n_t - wt + 1))
        out[:, t0 : t0 + wt] = fill
    return out


def make_pair(
    track: Waveform,
    start: float,
    noise_bank: list[NoiseClip],
    rir_bank: list[RoomImpulseResponse],
    fe: FrontendConfig,
    aug: AugmentConfig,
    rng: np.random.Generator,
    trace: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (anchor, positive) log-mel spectrograms for the clean window at ``start``.

    Stage order is offset -> reverb -> noise -> SpecAugment.  If ``trace`` is
    given it is filled with the random draws (delta, rir index, snr, ...).
    """
    n = fe.segment_samples
    first = int(round(start * fe.sample_rate))
    clean = np.asarray(track.samples[first : first + n], dtype=np.float64)
    if len(clean) != n:
        raise OffsetOutOfBoundsError(f"clean window at {start:.3f}s exceeds the track")
    anchor = log_mel(clean, fe)
    trace = trace if trace is not None else {}

    x = clean
    if aug.enable_offset and rng.random() < aug.p_offset:
        for _ in range(aug.max_offset_tries):
            try:
                shifted = time_offset_segment(track, start, fe, aug, rng)
            except OffsetOutOfBoundsError:
                continue
            x = np.asarray(shifted.segment.samples, dtype=np.float64)
            trace["delta"] = shifted.delta
            break
        else:
            trace["delta"] = 0.0
    if aug.enable_reverb and rng.random() < aug.p_reverb:
        if not rir_bank:
            raise EmptyInputError("reverb enabled with an empty RIR bank")
        k = int(rng.integers(len(rir_bank)))
        x = apply_reverb(x, rir_bank[k])
        trace["rir"] = k
    if aug.enable_noise and rng.random() < aug.p_noise:
        if not noise_bank:
            raise EmptyInputError("noise mixing enabled with an empty noise bank")
        k = int(rng.integers(len(noise_bank)))
        snr = float(rng.uniform(aug.snr_min_db, aug.snr_max_db))
        if mean_power(x) > 0:
            x = mix_noise(x, noise_bank[k], snr, rng)
        trace["noise"], trace["snr_db"] = k, snr

    positive = log_mel(x, fe) if x is not clean else anchor.copy()
    if aug.enable_specaugment and rng.random() < aug.p_specaugment:
        positive = spec_augment(positive, aug, rng)
    return anchor, positive


def distort(
    x: np.ndarray,
    noise: NoiseClip | None,
    rir: RoomImpulseResponse | None,
    snr_db: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Query-side distortion: reverberate signal and noise alike, then mix at ``snr_db``."""
    x = np.asarray(x, dtype=np.float64)
    if noise is None:
        return apply_reverb(x, rir) if rir is not None else x
    n = noise_window(noise, len(x), rng)
    if rir is not None:
        x, n = apply_reverb(x, rir), apply_reverb(n, rir)
    return mix_noise(x, n, snr_db)


def synth_noise(kind: str, duration: float, sample_rate: int, rng: np.random.Generator) -> NoiseClip:
    """Unit-RMS white or pink (-3 dB/octave) Gaussian noise."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * sample_rate))
    if n == 0:
        raise ValueError("duration shorter than one sample")
    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    elif kind == "pink":
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        shaping = np.zeros_like(f)
        shaping[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec * shaping, n=n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    x = x / np.sqrt(mean_power(x))
    return NoiseClip(x, sample_rate)


def synth_rir(t60: float, sample_rate: int, rng: np.random.Generator,
              tail_level: float = 0.1, length_factor: float = 1.5) -> RoomImpulseResponse:
    """Exponentially decaying Gaussian tail behind a unit direct-path tap."""
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    n = max(2, int(np.ceil(length_factor * t60 * sample_rate)))
    idx = np.arange(n)
    taps = tail_level * rng.standard_normal(n) * np.exp(-DECAY_60DB * idx / (t60 * sample_rate))
    taps[0] = 1.0
    tail_peak = np.max(np.abs(taps[1:]))
    if tail_peak >= 1.0:
        taps[1:] *= 0.99 / tail_peak
    return RoomImpulseResponse(taps, sample_rate, t60)


def schroeder_t60(taps: np.ndarray, sample_rate: int, lo_db: float = -5.0, hi_db: float = -25.0) -> float:
    """Reverberation time from a line fit to the backward-integrated decay curve."""
    energy = np.asarray(taps, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    sel = (edc_db <= lo_db) & (edc_db >= hi_db)
    t = np.arange(len(taps))[sel] / sample_rate
    slope, _ = np.polyfit(t, edc_db[sel], 1)
    return -60.0 / slope
