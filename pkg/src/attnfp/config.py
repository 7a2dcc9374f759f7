"""Layered engine configuration.

Every section is a plain dataclass whose defaults are the full-scale values
(16 kHz, 960 ms segments, 100 ms hop, 64x96 log-mel, d = 128, N = 512,
S = 100, 50 tables / 18 bits / 200 probes).  ``EngineConfig.toy()`` returns
the desk-scale preset used by the test-suite and ``--toy``.

The on-disk form is a TOML document with one table per section::

    [frontend]
    sample_rate = 16000
    ...
    [lsh]
    n_tables = 50
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    segment_ms: float = 960.0
    hop_ms: float = 100.0
    energy_threshold_db: float = 0.0
    n_mels: int = 64
    n_frames: int = 96
    fft_size: int = 1024
    frame_hop: int = 160
    mel_fmin: float = 0.0
    mel_fmax: float = 8000.0
    log_floor: float = 1e-10
    # energy gate during database creation; training always gates
    gate_database: bool = False

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def hop_seconds(self) -> float:
        return self.hop_ms / 1000.0

    @property
    def segment_seconds(self) -> float:
        return self.segment_ms / 1000.0

    def validate(self) -> None:
        if self.sample_rate <= 0 or self.segment_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("sample_rate, segment_ms and hop_ms must be positive")
        if self.fft_size <= 0 or self.frame_hop <= 0 or self.n_mels <= 0:
            raise ConfigError("fft_size, frame_hop and n_mels must be positive")
        if not 0 <= self.mel_fmin < self.mel_fmax <= self.sample_rate / 2:
            raise ConfigError("mel range must satisfy 0 <= fmin < fmax <= Nyquist")
        frames = self.segment_samples // self.frame_hop
        if frames != self.n_frames:
            raise ConfigError(
                f"segment of {self.segment_samples} samples at frame_hop {self.frame_hop} "
                f"gives {frames} frames, config says n_frames={self.n_frames}"
            )
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")


@dataclass(frozen=True)
class AugmentConfig:
    max_offset_fraction: float = 0.4
    snr_min_db: float = 0.0
    snr_max_db: float = 25.0
    time_masks: int = 2
    freq_masks: int = 2
    # 0.001 is the literal "0.1%" reading; it rounds every mask to zero width
    mask_width_fraction: float = 0.1
    enable_offset: bool = True
    enable_reverb: bool = True
    enable_noise: bool = True
    enable_specaugment: bool = True
    p_offset: float = 1.0
    p_reverb: float = 1.0
    p_noise: float = 1.0
    p_specaugment: float = 1.0
    max_offset_tries: int = 20
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.max_offset_fraction < 1:
            raise ConfigError("max_offset_fraction must lie in [0, 1)")
        if self.snr_min_db > self.snr_max_db:
            raise ConfigError("snr_min_db must not exceed snr_max_db")
        if self.mask_width_fraction < 0 or self.time_masks < 0 or self.freq_masks < 0:
            raise ConfigError("mask settings must be non-negative")
        for name in ("p_offset", "p_reverb", "p_noise", "p_specaugment"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be a probability")

    def all_disabled(self) -> "AugmentConfig":
        return dataclasses.replace(
            self,
            enable_offset=False,
            enable_reverb=False,
            enable_noise=False,
            enable_specaugment=False,
        )


@dataclass(frozen=True)
class EncoderConfig:
    n_mels: int = 64
    n_frames: int = 96
    base_channels: int = 32
    n_down_blocks: int = 5
    width: float = 1.0
    dim: int = 128
    head_hidden: int = 32
    # "front" (after the first conv), "resblock1" or "none"
    attention: str = "resblock1"
    attention_scale: float = 100.0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def channels(self) -> list[int]:
        """Channel count after the front conv, ResBlock1, and each stride-2 block."""
        base = self.base_channels * self.width
        if base < 1 or abs(base - round(base)) > 1e-9:
            raise ConfigError(
                f"width {self.width} gives non-integer base channel count {base}"
            )
        c0 = int(round(base))
        return [c0, c0] + [c0 * 2 ** (k + 1) for k in range(self.n_down_blocks)]

    def spatial(self) -> list[tuple[int, int]]:
        dims = [(self.n_mels, self.n_frames)] * 2
        f, t = self.n_mels, self.n_frames
        for _ in range(self.n_down_blocks):
            f, t = (f + 1) // 2, (t + 1) // 2
            dims.append((f, t))
        return dims

    @property
    def flat_size(self) -> int:
        f, t = self.spatial()[-1]
        return self.channels()[-1] * f * t

    @property
    def branch_in(self) -> int:
        return self.flat_size // self.dim

    @property
    def branch_hidden(self) -> int:
        return max(1, int(round(self.head_hidden * self.width)))

    def shape_chain(self) -> list[tuple[int, ...]]:
        """Activation shapes from the input to the embedding, per sample."""
        chain: list[tuple[int, ...]] = [(1, self.n_mels, self.n_frames)]
        for c, (f, t) in zip(self.channels(), self.spatial()):
            chain.append((c, f, t))
        chain.append((self.flat_size,))
        chain.append((self.dim,))
        return chain

    def validate(self) -> None:
        if self.attention not in ("front", "resblock1", "none"):
            raise ConfigError(f"unknown attention placement {self.attention!r}")
        if self.dim <= 0 or self.n_down_blocks < 0:
            raise ConfigError("dim must be positive and n_down_blocks non-negative")
        self.channels()
        if self.flat_size % self.dim:
            raise ConfigError(
                f"flatten size {self.flat_size} is not divisible by dim {self.dim}"
            )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    temperature: float = 0.05
    epochs: int = 150
    lr_base: float = 5e-4
    lr_max: float = 5e-2
    lr_ramp_epochs: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # 0 = one gated segment per track per epoch
    steps_per_epoch: int = 0
    max_gate_tries: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be an even number >= 2")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not self.lr_base < self.lr_max:
            raise ConfigError("lr_base must be below lr_max")
        if self.epochs < 1 or self.lr_ramp_epochs < 0:
            raise ConfigError("epochs must be >= 1 and lr_ramp_epochs >= 0")


@dataclass(frozen=True)
class LshConfig:
    n_tables: int = 50
    hash_bits: int = 18
    n_probes: int = 200
    top_k: int = 5
    seed: int = 0

    def validate(self) -> None:
        if not 1 <= self.hash_bits <= 30:
            raise ConfigError("hash_bits must lie in [1, 30]")
        if self.n_tables < 1 or self.n_probes < self.n_tables:
            raise ConfigError("need n_tables >= 1 and n_probes >= n_tables")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    lsh: LshConfig = field(default_factory=LshConfig)

    @classmethod
    def toy(cls) -> "EngineConfig":
        return cls(
            encoder=EncoderConfig(width=0.125),
            train=TrainConfig(batch_size=64, epochs=30, lr_ramp_epochs=8, lr_max=5e-3),
        )

    def validate(self) -> "EngineConfig":
        for section in (self.frontend, self.augment, self.encoder, self.train, self.lsh):
            section.validate()
        fe, enc = self.frontend, self.encoder
        if (fe.n_mels, fe.n_frames) != (enc.n_mels, enc.n_frames):
            raise ConfigError(
                f"spectrogram shape {fe.n_mels}x{fe.n_frames} does not match encoder "
                f"input {enc.n_mels}x{enc.n_frames}"
            )
        return self

    def with_seed(self, seed: int) -> "EngineConfig":
        return dataclasses.replace(
            self,
            augment=dataclasses.replace(self.augment, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            lsh=dataclasses.replace(self.lsh, seed=seed),
        )

    def to_dict(self) -> dict:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict, base: "EngineConfig | None" = None) -> "EngineConfig":
        base = base or cls()
        sections = {}
        for f in fields(cls):
            current = getattr(base, f.name)
            overrides = doc.get(f.name, {})
            if not isinstance(overrides, dict):
                raise ConfigError(f"[{f.name}] must be a table")
            sections[f.name] = _apply(current, overrides, f.name)
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        return cls(**sections).validate()

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, base: "EngineConfig | None" = None) -> "EngineConfig":
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        return cls.from_dict(doc, base)

    @classmethod
    def load(cls, path: str | Path, base: "EngineConfig | None" = None) -> "EngineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text, base)


def _apply(section, overrides: dict, name: str):
    known = {f.name: f for f in fields(section)}
    values = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        current = getattr(section, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be a boolean")
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name}.{key} must be an integer")
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key} must be a number")
            value = float(value)
        elif isinstance(current, str) and not isinstance(value, str):
            raise ConfigError(f"{name}.{key} must be a string")
        values[key] = value
    return dataclasses.replace(section, **values)
