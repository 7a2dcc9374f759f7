"""Audio front end: resampling, segmentation, energy gate and log-mel features."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gcd

import numpy as np
from scipy import signal

from .config import FrontendConfig
from .errors import AudioTooShortError, EmptyInputError

RESAMPLE_TAPS_PER_PHASE = 64


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AudioSegment:
    samples: np.ndarray
    source_track: int
    start_time: float


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited rational resampling with a windowed-sinc polyphase filter."""
    if w.sample_rate <= 0 or target_rate <= 0:
        raise ValueError("sample rates must be positive")
    x = np.asarray(w.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("cannot resample an empty signal")
    if w.sample_rate == target_rate:
        return Waveform(x.copy(), target_rate)
    g = gcd(w.sample_rate, target_rate)
    up, down = target_rate // g, w.sample_rate // g
    y = signal.resample_poly(x, up, down, window=_polyphase_filter(up, down))
    return Waveform(y, target_rate)


@lru_cache(maxsize=16)
def _polyphase_filter(up: int, down: int) -> np.ndarray:
    # cutoff at the lower Nyquist; odd length keeps the delay integral
    n_taps = RESAMPLE_TAPS_PER_PHASE * up + 1
    return signal.firwin(n_taps, 1.0 / max(up, down), window=("kaiser", 8.0))


def segment_starts(n_samples: int, cfg: FrontendConfig) -> np.ndarray:
    seg, hop = cfg.segment_samples, cfg.hop_samples
    if n_samples < seg:
        raise AudioTooShortError(
            f"signal of {n_samples} samples is shorter than one segment ({seg})"
        )
    count = (n_samples - seg) // hop + 1
    return np.arange(count, dtype=np.int64) * hop


def segment_stream(w: Waveform, cfg: FrontendConfig, track_id: int = 0) -> list[AudioSegment]:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform at {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    seg = cfg.segment_samples
    return [
        AudioSegment(w.samples[s : s + seg], track_id, s / cfg.sample_rate)
        for s in segment_starts(len(w.samples), cfg)
    ]


def mean_power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def energy_gate(seg: AudioSegment | np.ndarray, reference_power: float, threshold_db: float) -> bool:
    """Keep the segment iff its power relative to ``reference_power`` reaches the threshold."""
    if reference_power <= 0:
        raise ValueError("reference_power must be positive")
    samples = seg.samples if isinstance(seg, AudioSegment) else seg
    p = mean_power(samples)
    if p == 0.0:
        return False
    return bool(10.0 * np.log10(p / reference_power) >= threshold_db)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FrontendConfig) -> np.ndarray:
    """n_mels + 2 corner frequencies in Hz; band k spans edges[k]..edges[k+2]."""
    mels = np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular filters, shape (n_mels, fft_size // 2 + 1), peak gain 1."""
    edges = mel_band_edges(cfg)
    freqs = np.fft.rfftfreq(cfg.fft_size, d=1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def _window(n: int) -> np.ndarray:
    return signal.get_window("hann", n, fftbins=True)


def power_spectrogram(x: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Centered STFT power, frames at k * frame_hop for k < len(x) // frame_hop."""
    x = np.asarray(x, dtype=np.float64)
    half = cfg.fft_size // 2
    padded = np.pad(x, half, mode="reflect")
    n_frames = len(x) // cfg.frame_hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.fft_size)[
        : n_frames * cfg.frame_hop : cfg.frame_hop
    ]
    spec = np.fft.rfft(frames * _window(cfg.fft_size), axis=-1)
    return (spec.real**2 + spec.imag**2).T


def log_mel(seg: AudioSegment | np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    samples = seg.samples if isinstance(seg, AudioSegment) else seg
    if len(samples) != cfg.segment_samples:
        raise ValueError(
            f"segment has {len(samples)} samples, expected {cfg.segment_samples}"
        )
    mel = mel_filterbank(cfg) @ power_spectrogram(samples, cfg)
    return np.log(np.maximum(mel, cfg.log_floor))


def log_mel_batch(segments: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """log_mel over a (B, segment_samples) array, returns (B, n_mels, n_frames)."""
    segments = np.atleast_2d(segments)
    return np.stack([log_mel(s, cfg) for s in segments])
