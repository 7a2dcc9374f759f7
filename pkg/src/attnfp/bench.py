"""Latency / recall / footprint benchmark over a built database."""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .index import LshIndex, brute_force_top1, meta_path, tracks_path


def perturb_to_cosine(vectors: np.ndarray, cosine: float, rng: np.random.Generator) -> np.ndarray:
    """Add isotropic Gaussian noise so the expected cosine to the original is ``cosine``."""
    v = np.asarray(vectors, dtype=np.float64)
    d = v.shape[1]
    sigma = np.sqrt((1.0 / cosine**2 - 1.0) / d)
    q = v / np.linalg.norm(v, axis=1, keepdims=True) + sigma * rng.standard_normal(v.shape)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def recall_at_1(index: LshIndex, queries: np.ndarray, n_probes: int | None = None,
                truth: np.ndarray | None = None) -> float:
    truth = brute_force_top1(index.db, queries) if truth is None else truth
    hits = 0
    for q, t in zip(queries, truth):
        r = index.query(q, k=1, n_probes=n_probes)
        hits += bool(r) and r[0].record_id == t
    return hits / len(queries) if len(queries) else float("nan")


def lookup_latencies(index: LshIndex, queries: np.ndarray, k: int | None = None) -> np.ndarray:
    out = np.empty(len(queries))
    for i, q in enumerate(queries):
        t = time.perf_counter()
        index.query(q, k)
        out[i] = time.perf_counter() - t
    return out


def footprint(db_path: str | Path) -> dict[str, int]:
    p = Path(db_path)
    sizes = {"database_bytes": p.stat().st_size}
    for side, key in ((tracks_path(p), "tracks_tsv_bytes"), (meta_path(p), "lsh_meta_bytes")):
        sizes[key] = side.stat().st_size if side.exists() else 0
    return sizes


def percentiles(x: np.ndarray) -> dict[str, float]:
    if len(x) == 0:
        return {}
    p50, p90, p99 = np.percentile(x, [50, 90, 99])
    return {"p50_ms": 1e3 * p50, "p90_ms": 1e3 * p90, "p99_ms": 1e3 * p99, "mean_ms": 1e3 * float(np.mean(x))}


def run_bench(index: LshIndex, db_path: str | Path, n_lookups: int = 10_000, cosine: float = 0.9,
              seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    n = min(n_lookups, len(index.db))
    src = rng.choice(len(index.db), n, replace=False)
    queries = perturb_to_cosine(index.db.embeddings[src], cosine, rng)
    lat = lookup_latencies(index, queries)
    report = {
        "records": len(index.db),
        "dim": index.db.dim,
        "lookups": n,
        "lookup_latency": percentiles(lat),
        "recall_at_1_vs_oracle": recall_at_1(index, queries),
    }
    report.update(footprint(db_path))
    return report
