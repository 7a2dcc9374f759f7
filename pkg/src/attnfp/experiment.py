"""Desk-scale end-to-end experiment on synthetic tracks.

Trains a toy-width encoder, indexes every segment of every track, then runs
clean and distorted 2 s self-queries against both the trained encoder and an
untrained control with the same architecture and initialization seed.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import distort, synth_noise, synth_rir
from .config import EngineConfig
from .encoder import Encoder, build_encoder, encode_batch, save_checkpoint
from .errors import EmptyInputError
from .frontend import Waveform, log_mel, segment_starts
from .index import FingerprintDB, LshIndex
from .retrieval import LabeledQuery, evaluate
from .synthetic import synth_corpus, synth_noise_bank, synth_rir_bank
from .trainer import train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToySetup:
    n_tracks: int = 200
    track_seconds: float = 30.0
    epochs: int = 30
    steps_per_epoch: int = 40
    n_queries: int = 300
    query_seconds: float = 2.0
    query_snr_db: float = 15.0
    query_t60: float = 0.5
    seed: int = 0


def build_databases(tracks: list[Waveform], names: list[str], models: list[Encoder],
                    cfg: EngineConfig) -> list[FingerprintDB]:
    """One database per model from a single pass of feature extraction."""
    fe = cfg.frontend
    n = fe.segment_samples
    cols = [([], [], []) for _ in models]
    for tid, w in enumerate(tracks):
        starts = segment_starts(len(w.samples), fe)
        specs = np.stack([log_mel(w.samples[s : s + n], fe) for s in starts]).astype(np.float32)
        for (tids, segs, embs), model in zip(cols, models):
            tids.append(np.full(len(starts), tid))
            segs.append(starts // fe.hop_samples)
            embs.append(encode_batch(specs, model))
    if not tracks:
        raise EmptyInputError("no tracks")
    return [
        FingerprintDB(np.concatenate(t), np.concatenate(s), np.concatenate(e), list(names))
        for t, s, e in cols
    ]


def make_queries(tracks: list[Waveform], setup: ToySetup, cfg: EngineConfig,
                 rng: np.random.Generator) -> dict[str, list[LabeledQuery]]:
    """Clean and distorted self-queries cut at uniformly random (off-grid) start times."""
    fe = cfg.frontend
    n = int(round(setup.query_seconds * fe.sample_rate))
    noise = synth_noise("white", setup.query_seconds * 4, fe.sample_rate, rng)
    rir = synth_rir(setup.query_t60, fe.sample_rate, rng)
    clean, noisy = [], []
    for _ in range(setup.n_queries):
        tid = int(rng.integers(len(tracks)))
        first = int(rng.integers(0, len(tracks[tid].samples) - n + 1))
        x = tracks[tid].samples[first : first + n]
        start = first / fe.sample_rate
        clean.append(LabeledQuery(Waveform(x, fe.sample_rate), tid, start, "clean"))
        y = distort(x, noise, rir, setup.query_snr_db, rng)
        label = f"white{setup.query_snr_db:g}dB+rir{setup.query_t60:g}s"
        noisy.append(LabeledQuery(Waveform(y, fe.sample_rate), tid, start, label))
    return {"clean": clean, "distorted": noisy}


def run_toy_experiment(setup: ToySetup = ToySetup(), cfg: EngineConfig | None = None,
                       workdir: str | Path | None = None) -> dict:
    cfg = (cfg or EngineConfig.toy()).with_seed(setup.seed)
    cfg = dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train, epochs=setup.epochs, steps_per_epoch=setup.steps_per_epoch),
    ).validate()
    fe = cfg.frontend
    t0 = time.time()
    tracks = synth_corpus(setup.n_tracks, setup.track_seconds, fe.sample_rate, setup.seed)
    names = [f"synth_{i:04d}" for i in range(len(tracks))]
    bank_rng = np.random.default_rng(setup.seed + 1)
    noise_bank = synth_noise_bank(8, 10.0, fe.sample_rate, bank_rng)
    rir_bank = synth_rir_bank(np.linspace(0.1, 0.8, 8), fe.sample_rate, bank_rng)

    untrained = build_encoder(cfg.encoder, seed=cfg.train.seed)
    model, history = train(
        tracks, noise_bank, rir_bank, cfg,
        model=build_encoder(cfg.encoder, seed=cfg.train.seed),
        log_path=Path(workdir) / "train_log.csv" if workdir else None,
    )
    t_train = time.time() - t0
    if workdir:
        save_checkpoint(model, Path(workdir) / "toy.ckpt")

    db_trained, db_control = build_databases(tracks, names, [model, untrained], cfg)
    t_ingest = time.time() - t0 - t_train
    queries = make_queries(tracks, setup, cfg, np.random.default_rng(setup.seed + 2))

    results = {
        "setup": dataclasses.asdict(setup),
        "records": len(db_trained),
        "loss_first_epoch": history[0].mean_loss,
        "loss_last_epoch": history[-1].mean_loss,
        "loss_trace": [h.mean_loss for h in history],
        "train_seconds": t_train,
        "ingest_seconds": t_ingest,
    }
    for label, db, enc in (("trained", db_trained, model), ("untrained", db_control, untrained)):
        index = LshIndex(db, cfg.lsh)
        for kind, qs in queries.items():
            report = evaluate(qs, index, enc, fe)
            results[f"{label}_{kind}_segment"] = report.accuracy("segment")
            results[f"{label}_{kind}_audio"] = report.accuracy("audio")
            log.info("%s %s: segment %.1f%% audio %.1f%%", label, kind,
                     results[f"{label}_{kind}_segment"], results[f"{label}_{kind}_audio"])
    results["total_seconds"] = time.time() - t0
    if workdir:
        (Path(workdir) / "toy_results.json").write_text(json.dumps(results, indent=2))
    return results
