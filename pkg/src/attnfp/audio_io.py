"""WAV reading/writing and on-disk corpus/bank directories."""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .augment import NoiseClip, RoomImpulseResponse
from .errors import FormatError
from .frontend import Waveform, resample


def read_wav(path: str | Path, target_rate: int | None = None) -> Waveform:
    """Mono float waveform; multichannel files are averaged across channels."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(str(path))
    except (OSError, ValueError, EOFError) as exc:
        raise FormatError(f"{path}: unreadable WAV file ({exc})") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise FormatError(f"{path}: no samples")
    w = Waveform(x, int(rate))
    if target_rate is not None and w.sample_rate != target_rate:
        w = resample(w, target_rate)
    return w


def write_wav(path: str | Path, w: Waveform | np.ndarray, sample_rate: int | None = None,
              subtype: str = "float") -> None:
    if isinstance(w, Waveform):
        x, rate = w.samples, w.sample_rate
    else:
        x, rate = w, sample_rate
    x = np.asarray(x, dtype=np.float64)
    if subtype == "pcm16":
        data = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(rate), data)


def list_wavs(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".wav")


def load_corpus(directory: str | Path, sample_rate: int) -> tuple[list[Waveform], list[str]]:
    paths = list_wavs(directory)
    if not paths:
        raise FormatError(f"{directory}: no .wav files")
    return [read_wav(p, sample_rate) for p in paths], [p.stem for p in paths]


def load_noise_bank(directory: str | Path, sample_rate: int) -> list[NoiseClip]:
    bank = []
    for p in list_wavs(directory):
        w = read_wav(p, sample_rate)
        bank.append(NoiseClip(w.samples, w.sample_rate))
    return bank


def load_rir_bank(directory: str | Path, sample_rate: int) -> list[RoomImpulseResponse]:
    """RIR files may carry their t60 in the name as ``..._t60-0.50.wav``."""
    bank = []
    for p in list_wavs(directory):
        w = read_wav(p, sample_rate)
        t60 = 0.0
        if "_t60-" in p.stem:
            try:
                t60 = float(p.stem.rsplit("_t60-", 1)[1])
            except ValueError:
                pass
        bank.append(RoomImpulseResponse(w.samples, w.sample_rate, t60))
    return bank
