"""Contrastive training: NT-Xent loss, cyclic learning rate, epoch loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import NoiseClip, RoomImpulseResponse, make_pair
from .config import EngineConfig, TrainConfig
from .encoder import Encoder, build_encoder
from .errors import FingerprintError, NumericalError
from .frontend import Waveform, energy_gate, mean_power

log = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-3


def cosine_sim(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def positive_index(n: int) -> np.ndarray:
    """Rows 2k and 2k+1 are each other's positive."""
    return np.arange(n) ^ 1


def nt_xent(emb, temperature: float, check_norm: bool = True) -> tuple[float, np.ndarray]:
    """Mean NT-Xent over all N anchor->positive directions, and its gradient w.r.t. ``emb``.

    Similarities are cosines, so the gradient is exact for any non-zero rows;
    ``check_norm`` enforces the unit-row precondition of the training path.
    """
    e = np.asarray(emb, dtype=np.float64)
    n = e.shape[0]
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if n < 2 or n % 2:
        raise ValueError(f"batch must hold an even number of rows, got {n}")
    norms = np.linalg.norm(e, axis=1)
    if check_norm and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
        raise ValueError("embedding rows must be unit-norm")
    u = e / norms[:, None]
    logits = (u @ u.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    pos = positive_index(n)
    rows = np.arange(n)
    top = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - top)
    denom = expd.sum(axis=1)
    per_anchor = -(logits[rows, pos] - top[:, 0]) + np.log(denom)
    loss = float(per_anchor.mean())

    g_logits = expd / denom[:, None]
    g_logits[rows, pos] -= 1.0
    g_logits /= n
    g_u = (g_logits + g_logits.T) @ u / temperature
    g_e = (g_u - np.sum(g_u * u, axis=1, keepdims=True) * u) / norms[:, None]
    return loss, g_e


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Triangular cycle: base -> max over the ramp, then linearly back to base."""
    if cfg.lr_ramp_epochs > 0 and epoch <= cfg.lr_ramp_epochs:
        frac = epoch / cfg.lr_ramp_epochs
    else:
        remaining = max(cfg.epochs - 1 - cfg.lr_ramp_epochs, 1)
        frac = max(0.0, 1.0 - (epoch - cfg.lr_ramp_epochs) / remaining)
    return cfg.lr_base + frac * (cfg.lr_max - cfg.lr_base)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    losses: list[float] = field(default_factory=list)


class Corpus:
    """In-memory training tracks with their reference powers for the energy gate."""

    def __init__(self, tracks: list[Waveform]):
        if not tracks:
            raise FingerprintError("empty training corpus")
        self.tracks = tracks
        self.reference_power = [mean_power(t.samples) for t in tracks]

    def __len__(self):
        return len(self.tracks)

    def sample_start(self, k: int, cfg: EngineConfig, rng: np.random.Generator) -> float | None:
        """Random gate-passing segment start (seconds) in track k, or None."""
        fe = cfg.frontend
        track, ref = self.tracks[k], self.reference_power[k]
        n = fe.segment_samples
        if len(track.samples) < n or ref <= 0:
            return None
        for _ in range(cfg.train.max_gate_tries):
            first = int(rng.integers(0, len(track.samples) - n + 1))
            if energy_gate(track.samples[first : first + n], ref, fe.energy_threshold_db):
                return first / fe.sample_rate
        return None


def make_optimizer(model: Encoder, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.lr_base,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def steps_per_epoch(n_tracks: int, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch > 0:
        return cfg.steps_per_epoch
    return max(1, math.ceil(n_tracks / (cfg.batch_size // 2)))


def build_batch(
    corpus: Corpus,
    track_ids: list[int],
    noise_bank: list[NoiseClip],
    rir_bank: list[RoomImpulseResponse],
    cfg: EngineConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Interleaved (anchor, positive) spectrograms, shape (N, F, T)."""
    specs = []
    for k in track_ids:
        start = corpus.sample_start(k, cfg, rng)
        if start is None:
            # fall back to any other track that still yields a gated segment
            for alt in rng.permutation(len(corpus)):
                start = corpus.sample_start(int(alt), cfg, rng)
                if start is not None:
                    k = int(alt)
                    break
            else:
                raise FingerprintError("corpus exhausted: no segment passes the energy gate")
        anchor, positive = make_pair(
            corpus.tracks[k], start, noise_bank, rir_bank, cfg.frontend, cfg.augment, rng
        )
        specs.extend((anchor, positive))
    return np.stack(specs).astype(np.float32)


def train_step(model: Encoder, optimizer, batch: np.ndarray, temperature: float) -> float:
    model.train()
    optimizer.zero_grad()
    emb = model(torch.from_numpy(batch))
    loss, grad = nt_xent(emb.detach().double().numpy(), temperature)
    if not math.isfinite(loss):
        raise NumericalError("non-finite training loss")
    emb.backward(torch.from_numpy(grad).to(emb.dtype))
    optimizer.step()
    return loss


def train_epoch(
    model: Encoder,
    optimizer,
    corpus: Corpus,
    noise_bank: list[NoiseClip],
    rir_bank: list[RoomImpulseResponse],
    cfg: EngineConfig,
    epoch: int,
    rng: np.random.Generator,
) -> EpochStats:
    tc = cfg.train
    lr = learning_rate(epoch, tc)
    for group in optimizer.param_groups:
        group["lr"] = lr
    half = tc.batch_size // 2
    n_steps = steps_per_epoch(len(corpus), tc)
    order = np.concatenate(
        [rng.permutation(len(corpus)) for _ in range(math.ceil(n_steps * half / len(corpus)))]
    )
    losses = []
    for step in range(n_steps):
        ids = [int(k) for k in order[step * half : (step + 1) * half]]
        batch = build_batch(corpus, ids, noise_bank, rir_bank, cfg, rng)
        losses.append(train_step(model, optimizer, batch, tc.temperature))
    return EpochStats(epoch, float(np.mean(losses)), lr, losses)


def train(
    tracks: list[Waveform],
    noise_bank: list[NoiseClip],
    rir_bank: list[RoomImpulseResponse],
    cfg: EngineConfig,
    model: Encoder | None = None,
    log_path: str | Path | None = None,
) -> tuple[Encoder, list[EpochStats]]:
    """Run ``cfg.train.epochs`` epochs; optionally write a per-epoch CSV log."""
    cfg.validate()
    corpus = Corpus(tracks)
    model = model if model is not None else build_encoder(cfg.encoder, seed=cfg.train.seed)
    optimizer = make_optimizer(model, cfg.train)
    rng = np.random.default_rng(cfg.train.seed)
    history = []
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    try:
        if fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "mean_loss"])
        for epoch in range(cfg.train.epochs):
            stats = train_epoch(model, optimizer, corpus, noise_bank, rir_bank, cfg, epoch, rng)
            history.append(stats)
            log.info("epoch %d lr %.2e loss %.4f", epoch, stats.lr, stats.mean_loss)
            if writer:
                writer.writerow([epoch, f"{stats.lr:.6e}", f"{stats.mean_loss:.6f}"])
                fh.flush()
    finally:
        if fh:
            fh.close()
    model.eval()
    return model, history
