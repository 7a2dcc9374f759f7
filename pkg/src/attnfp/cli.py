"""Command-line entry point: synth, train, ingest, query, eval, bench.

Exit codes: 0 success, 1 operational error (bad input data, corrupt files),
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio_io
from .augment import synth_noise, synth_rir
from .bench import percentiles, run_bench
from .config import EngineConfig
from .encoder import load_checkpoint, save_checkpoint
from .errors import ConfigError, FingerprintError
from .index import FingerprintDB, LshIndex, load_index, save_index
from .retrieval import (
    EvalReport,
    LabeledQuery,
    fingerprint_query,
    fingerprint_track,
    search,
)
from .synthetic import synth_track
from .trainer import train

log = logging.getLogger("attnfp")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML engine config")
    p.add_argument("--toy", action="store_true", help="start from the desk-scale preset")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnfp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic tracks, noise and RIR banks")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tracks", type=int, default=10)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--noises", type=int, default=4)
    p.add_argument("--noise-duration", type=float, default=10.0)
    p.add_argument("--t60", type=float, nargs="*", default=[0.2, 0.4, 0.5, 0.7, 0.8])

    p = sub.add_parser("train", help="contrastive training of the encoder")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--noise", type=Path, required=True)
    p.add_argument("--rir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, help="per-epoch CSV (default: <out>.csv)")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("ingest", help="fingerprint a corpus into a database")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("query", help="identify and localize a WAV clip")
    _add_common(p)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("wav", type=Path)
    p.add_argument("--k", type=int)
    p.add_argument("--level", choices=["segment", "audio"], default="segment")
    p.add_argument("--json", action="store_true", help="emit one JSON line")

    p = sub.add_parser("eval", help="accuracy over a query manifest")
    _add_common(p)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, help="CSV accuracy table (default: stdout)")
    p.add_argument("--k", type=int)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("bench", help="lookup latency, LSH recall and database footprint")
    _add_common(p)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--manifest", type=Path, help="queries for end-to-end latency")
    p.add_argument("--lookups", type=int, default=10_000)
    p.add_argument("--out", type=Path, help="JSON report path")
    return parser


def load_config(args) -> EngineConfig:
    cfg = EngineConfig.toy() if args.toy else EngineConfig()
    if args.config is not None:
        cfg = EngineConfig.load(args.config, base=cfg)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg.validate()


def _frontend_for(cfg: EngineConfig, model) -> EngineConfig:
    enc = model.cfg
    if (enc.n_mels, enc.n_frames) != (cfg.frontend.n_mels, cfg.frontend.n_frames):
        raise ConfigError("checkpoint input shape does not match the frontend config")
    return cfg


# --------------------------------------------------------------------------- commands


def cmd_synth(args, cfg: EngineConfig) -> int:
    rng = np.random.default_rng(cfg.train.seed)
    fs = cfg.frontend.sample_rate
    out = args.out
    for i in range(args.tracks):
        audio_io.write_wav(out / "corpus" / f"track_{i:04d}.wav", synth_track(args.duration, fs, rng))
    for i in range(args.noises):
        kind = "white" if i % 2 == 0 else "pink"
        clip = synth_noise(kind, args.noise_duration, fs, rng)
        audio_io.write_wav(out / "noise" / f"{kind}_{i:02d}.wav", clip.samples, fs)
    for i, t60 in enumerate(args.t60):
        rir = synth_rir(t60, fs, rng)
        audio_io.write_wav(out / "rir" / f"rir_{i:02d}_t60-{t60:.2f}.wav", rir.taps, fs)
    print(f"wrote {args.tracks} tracks, {args.noises} noise clips, {len(args.t60)} RIRs under {out}")
    return 0


def cmd_train(args, cfg: EngineConfig) -> int:
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs)).validate()
    fs = cfg.frontend.sample_rate
    tracks, names = audio_io.load_corpus(args.corpus, fs)
    noise = audio_io.load_noise_bank(args.noise, fs)
    rirs = audio_io.load_rir_bank(args.rir, fs)
    log_path = args.log or args.out.with_suffix(args.out.suffix + ".csv")
    t0 = time.time()
    model, history = train(tracks, noise, rirs, cfg, log_path=log_path)
    save_checkpoint(model, args.out)
    print(f"trained {len(history)} epochs on {len(tracks)} tracks in {time.time() - t0:.1f}s; "
          f"loss {history[0].mean_loss:.4f} -> {history[-1].mean_loss:.4f}; checkpoint {args.out}")
    return 0


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_ingest(args, cfg: EngineConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _frontend_for(cfg, model)
    fe = cfg.frontend
    paths = audio_io.list_wavs(args.corpus)
    if not paths:
        raise FingerprintError(f"{args.corpus}: no .wav files")
    t0 = time.time()
    per_track = _map(lambda p: fingerprint_track(audio_io.read_wav(p, fe.sample_rate), model, fe),
                     paths, args.threads)
    db = FingerprintDB(
        np.concatenate([np.full(len(s), i) for i, (_, s) in enumerate(per_track)]),
        np.concatenate([s for _, s in per_track]),
        np.concatenate([e for e, _ in per_track]),
        [p.stem for p in paths],
    )
    t_fp = time.time() - t0
    index = LshIndex(db, cfg.lsh)
    save_index(index, args.out, hop_seconds=fe.hop_seconds)
    print(f"records {len(db)} tracks {len(paths)} dim {db.dim} "
          f"fingerprint {t_fp:.1f}s index {time.time() - t0 - t_fp:.1f}s -> {args.out}")
    return 0


def _result_dict(result, db: FingerprintDB) -> dict:
    return {
        "track": db.track_name(result.track_id),
        "track_id": result.track_id,
        "timestamp": result.timestamp,
        "start_index": result.start_index,
        "consistency": result.consistency,
        "votes": result.votes,
        "localized": result.localized,
    }


def cmd_query(args, cfg: EngineConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _frontend_for(cfg, model)
    index, hop = load_index(args.db)
    fe = dataclasses.replace(cfg.frontend, hop_ms=hop * 1000.0)
    w = audio_io.read_wav(args.wav, fe.sample_rate)
    result = search(fingerprint_query(w, model, fe), index, args.k)
    info = _result_dict(result, index.db)
    if args.level == "audio":
        info = {k: info[k] for k in ("track", "track_id", "votes")}
    if args.json:
        print(json.dumps(info))
    elif args.level == "audio" or not result.localized:
        suffix = "" if args.level == "audio" else " localization failed"
        print(f"{info['track']} votes={result.votes}{suffix}")
    else:
        print(f"{info['track']} t={result.timestamp:.2f}s consistency={result.consistency:.2f} "
              f"votes={result.votes}")
    return 0


def read_manifest(path: Path) -> list[tuple[Path, str, float, str]]:
    rows = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FingerprintError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or (lineno == 1 and line.startswith("query_path")):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise FingerprintError(f"{path}:{lineno}: expected query_path, track_name, true_start_s[, condition]")
        try:
            start = float(parts[2])
        except ValueError as exc:
            raise FingerprintError(f"{path}:{lineno}: bad start time {parts[2]!r}") from exc
        qpath = Path(parts[0])
        if not qpath.is_absolute():
            qpath = path.parent / qpath
        rows.append((qpath, parts[1], start, parts[3] if len(parts) > 3 else "unlabeled"))
    return rows


def cmd_eval(args, cfg: EngineConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _frontend_for(cfg, model)
    index, hop = load_index(args.db)
    fe = dataclasses.replace(cfg.frontend, hop_ms=hop * 1000.0)
    name_to_id = {n: i for i, n in enumerate(index.db.track_names)}
    rows = read_manifest(args.manifest)
    queries = []
    for qpath, name, start, cond in rows:
        if name not in name_to_id:
            raise FingerprintError(f"manifest track {name!r} is not in the database")
        queries.append(LabeledQuery(audio_io.read_wav(qpath, fe.sample_rate), name_to_id[name], start, cond))
    report = EvalReport()
    results = _map(lambda q: search(fingerprint_query(q.waveform, model, fe), index, args.k),
                   queries, args.threads)
    for q, r in zip(queries, results):
        report.add(q, r)
    table = report.to_csv_rows()
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        csv.writer(fh).writerows(table)
    finally:
        if args.out:
            fh.close()
    if report.rows:
        print(f"segment top-1 {report.accuracy('segment'):.1f}%  audio top-1 "
              f"{report.accuracy('audio'):.1f}%  ({len(queries)} queries)", file=sys.stderr)
    return 0


def cmd_bench(args, cfg: EngineConfig) -> int:
    index, hop = load_index(args.db)
    report = run_bench(index, args.db, args.lookups, seed=cfg.lsh.seed)
    if args.manifest is not None:
        rows = read_manifest(args.manifest)
        latencies = []
        if rows:
            if args.checkpoint is None:
                raise ConfigError("--manifest needs --checkpoint for end-to-end timing")
            model = load_checkpoint(args.checkpoint)
            fe = dataclasses.replace(cfg.frontend, hop_ms=hop * 1000.0)
            for qpath, *_ in rows:
                w = audio_io.read_wav(qpath, fe.sample_rate)
                t = time.perf_counter()
                search(fingerprint_query(w, model, fe), index)
                latencies.append(time.perf_counter() - t)
        report["queries"] = len(latencies)
        report["query_latency"] = percentiles(np.asarray(latencies))
    text = json.dumps(report, indent=2)
    if args.out:
        args.out.write_text(text)
    print(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "ingest": cmd_ingest,
    "query": cmd_query,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"attnfp {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (FingerprintError, OSError, ValueError) as exc:
        print(f"attnfp {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
