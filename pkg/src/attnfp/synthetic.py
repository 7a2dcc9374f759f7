"""Synthetic music-like tracks and distortion banks for desk-scale experiments."""
from __future__ import annotations

import numpy as np
from scipy import signal

from .augment import NoiseClip, RoomImpulseResponse, synth_noise, synth_rir
from .frontend import Waveform


def _colored_envelope(n: int, sample_rate: int, rng: np.random.Generator, cutoff_hz: float) -> np.ndarray:
    b, a = signal.butter(2, cutoff_hz / (sample_rate / 2))
    env = signal.lfilter(b, a, rng.standard_normal(n))
    return env / (np.std(env) + 1e-12)


def synth_track(duration: float, sample_rate: int, rng: np.random.Generator) -> Waveform:
    """A sequence of harmonic notes, amplitude-modulated by low-passed noise, over pink noise."""
    n = int(round(duration * sample_rate))
    x = np.zeros(n)
    pos = 0
    while pos < n:
        length = min(int(rng.uniform(0.08, 0.4) * sample_rate), n - pos)
        t = np.arange(length) / sample_rate
        attack = np.minimum(1.0, t / 0.01)
        env = attack * np.exp(-t * rng.uniform(2.0, 12.0))
        note = np.zeros(length)
        for _ in range(int(rng.integers(1, 4))):
            f0 = 440.0 * 2.0 ** ((rng.integers(36, 90) - 69) / 12.0)
            for h in range(1, 5):
                if f0 * h < sample_rate / 2 - 200:
                    note += rng.uniform(0.2, 1.0) / h * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
        x[pos : pos + length] += env * note
        pos += length
    x *= np.exp(0.5 * _colored_envelope(n, sample_rate, rng, 4.0))
    bed = synth_noise("pink", duration, sample_rate, rng).samples
    x = x / np.sqrt(np.mean(x**2)) + 0.1 * bed
    return Waveform(0.1 * x / np.sqrt(np.mean(x**2)), sample_rate)


def synth_corpus(n_tracks: int, duration: float, sample_rate: int, seed: int) -> list[Waveform]:
    rng = np.random.default_rng(seed)
    return [synth_track(duration, sample_rate, rng) for _ in range(n_tracks)]


def synth_noise_bank(n: int, duration: float, sample_rate: int, rng: np.random.Generator) -> list[NoiseClip]:
    kinds = ["white", "pink"]
    return [synth_noise(kinds[i % 2], duration, sample_rate, rng) for i in range(n)]


def synth_rir_bank(t60s, sample_rate: int, rng: np.random.Generator) -> list[RoomImpulseResponse]:
    return [synth_rir(float(t), sample_rate, rng) for t in t60s]
