"""Query pipeline: fingerprint a query, vote for the track, localize by sequence search."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .config import FrontendConfig
from .encoder import Encoder, encode_batch
from .errors import EmptyInputError, LocalizationFailedError
from .frontend import Waveform, energy_gate, log_mel, mean_power, resample, segment_starts
from .index import FingerprintDB, LshIndex, Match

SEGMENT_TOLERANCE_S = 0.05
MIN_CONSISTENCY = 0.5


@dataclass(frozen=True)
class QueryFingerprint:
    subs: np.ndarray
    hop: float

    def __len__(self):
        return len(self.subs)


@dataclass(frozen=True)
class RetrievalResult:
    track_id: int
    votes: int
    start_index: int | None = None
    timestamp: float | None = None
    consistency: float = 0.0

    @property
    def localized(self) -> bool:
        return self.start_index is not None


def _spectrograms(samples: np.ndarray, fe: FrontendConfig, gate: bool = False) -> tuple[np.ndarray, np.ndarray]:
    starts = segment_starts(len(samples), fe)
    n = fe.segment_samples
    if gate:
        ref = mean_power(samples)
        keep = [s for s in starts if ref > 0 and energy_gate(samples[s : s + n], ref, fe.energy_threshold_db)]
        starts = np.asarray(keep, dtype=np.int64)
    specs = np.stack([log_mel(samples[s : s + n], fe) for s in starts]) if len(starts) else np.empty(
        (0, fe.n_mels, fe.n_frames)
    )
    return specs.astype(np.float32), starts // fe.hop_samples


def _at_rate(w: Waveform, fe: FrontendConfig) -> np.ndarray:
    if w.sample_rate != fe.sample_rate:
        w = resample(w, fe.sample_rate)
    return np.asarray(w.samples, dtype=np.float64)


def fingerprint_query(w: Waveform, model: Encoder, fe: FrontendConfig) -> QueryFingerprint:
    """Subfingerprints at hop H; the energy gate is never applied to queries."""
    specs, _ = _spectrograms(_at_rate(w, fe), fe)
    return QueryFingerprint(encode_batch(specs, model), fe.hop_seconds)


def fingerprint_track(w: Waveform, model: Encoder, fe: FrontendConfig) -> tuple[np.ndarray, np.ndarray]:
    """(embeddings, segment indices) for a reference track; gated iff ``fe.gate_database``."""
    specs, seg_idx = _spectrograms(_at_rate(w, fe), fe, gate=fe.gate_database)
    if len(specs) == 0:
        return np.empty((0, model.cfg.dim), dtype=np.float32), seg_idx
    return encode_batch(specs, model), seg_idx


def build_database(tracks: list[Waveform], names: list[str], model: Encoder, fe: FrontendConfig) -> FingerprintDB:
    tids, segs, embs = [], [], []
    for tid, w in enumerate(tracks):
        emb, seg = fingerprint_track(w, model, fe)
        tids.append(np.full(len(seg), tid))
        segs.append(seg)
        embs.append(emb)
    if not tids or sum(len(s) for s in segs) == 0:
        raise EmptyInputError("no segments to index")
    return FingerprintDB(np.concatenate(tids), np.concatenate(segs), np.concatenate(embs), list(names))


def lookup(qfp: QueryFingerprint, index: LshIndex, k: int | None = None) -> list[list[Match]]:
    return [index.query(q, k) for q in qfp.subs]


def identify(matches: list[list[Match]]) -> int:
    """Most frequent rank-1 track; ties by summed rank-1 similarity, then smaller id."""
    top = [m[0] for m in matches if m]
    if not top:
        raise EmptyInputError("no retrieved candidates to vote on")
    votes = Counter(m.track_id for m in top)
    sims = defaultdict(list)
    for m in top:
        sims[m.track_id].append(m.similarity)
    # fsum is correctly rounded, so the tie-break cannot depend on the order of positions
    score = {t: math.fsum(v) for t, v in sims.items()}
    return min(votes, key=lambda t: (-votes[t], -score[t], t))


def vote_count(matches: list[list[Match]], track_id: int) -> int:
    return sum(1 for m in matches if m and m[0].track_id == track_id)


def candidate_starts(matches: list[list[Match]], track_id: int) -> dict[int, tuple[int, float]]:
    """start index -> (number of supporting query positions, summed best similarity)."""
    best: dict[int, dict[int, float]] = defaultdict(dict)
    for m, cands in enumerate(matches):
        for c in cands:
            if c.track_id != track_id or c.segment_index < m:
                continue
            start = c.segment_index - m
            best[start][m] = max(best[start].get(m, -np.inf), c.similarity)
    return {s: (len(per_m), math.fsum(per_m.values())) for s, per_m in best.items()}


def localize(matches: list[list[Match]], track_id: int, hop: float) -> RetrievalResult:
    """Pick the candidate start supported by the largest fraction of the M query positions.

    Raises LocalizationFailedError when no start reaches 50 %.
    """
    n = len(matches)
    if n == 0:
        raise EmptyInputError("empty match list")
    starts = candidate_starts(matches, track_id)
    votes = vote_count(matches, track_id)
    if not starts:
        raise LocalizationFailedError(track_id, 0.0)
    start = min(starts, key=lambda s: (-starts[s][0], -starts[s][1], s))
    ratio = starts[start][0] / n
    if ratio < MIN_CONSISTENCY:
        raise LocalizationFailedError(track_id, ratio)
    return RetrievalResult(track_id, votes, start, start * hop, ratio)


def search(qfp: QueryFingerprint, index: LshIndex, k: int | None = None) -> RetrievalResult:
    """Identify and localize; a failed localization still reports the track."""
    matches = lookup(qfp, index, k)
    track = identify(matches)
    try:
        return localize(matches, track, qfp.hop)
    except LocalizationFailedError as exc:
        return RetrievalResult(track, vote_count(matches, track), consistency=exc.best_ratio)


def accuracy(hits: int, misses: int) -> float:
    total = hits + misses
    if total == 0:
        raise EmptyInputError("no queries evaluated")
    return 100.0 * hits / total


def segment_hit(result: RetrievalResult, true_track: int, true_start: float,
                tolerance: float = SEGMENT_TOLERANCE_S) -> bool:
    return (
        result.track_id == true_track
        and result.timestamp is not None
        and abs(result.timestamp - true_start) <= tolerance + 1e-9
    )


@dataclass(frozen=True)
class LabeledQuery:
    waveform: Waveform
    track_id: int
    start: float
    condition: str = "clean"


@dataclass
class EvalRow:
    condition: str
    length: float
    n: int = 0
    segment_hits: int = 0
    audio_hits: int = 0
    localization_failures: int = 0

    @property
    def segment_accuracy(self) -> float:
        return accuracy(self.segment_hits, self.n - self.segment_hits)

    @property
    def audio_accuracy(self) -> float:
        return accuracy(self.audio_hits, self.n - self.audio_hits)


@dataclass
class EvalReport:
    rows: dict[tuple[str, float], EvalRow] = field(default_factory=dict)
    results: list[RetrievalResult] = field(default_factory=list)

    def add(self, q: LabeledQuery, r: RetrievalResult, tolerance: float = SEGMENT_TOLERANCE_S):
        length = round(q.waveform.duration, 2)
        row = self.rows.setdefault((q.condition, length), EvalRow(q.condition, length))
        row.n += 1
        row.audio_hits += r.track_id == q.track_id
        row.segment_hits += segment_hit(r, q.track_id, q.start, tolerance)
        row.localization_failures += (r.track_id == q.track_id) and not r.localized
        self.results.append(r)

    def accuracy(self, level: str = "segment", condition: str | None = None) -> float:
        rows = [r for r in self.rows.values() if condition is None or r.condition == condition]
        n = sum(r.n for r in rows)
        hits = sum(r.segment_hits if level == "segment" else r.audio_hits for r in rows)
        return accuracy(hits, n - hits)

    def to_csv_rows(self) -> list[list]:
        out = [["condition", "query_length_s", "n", "segment_top1", "audio_top1", "localization_failed"]]
        for (cond, length), r in sorted(self.rows.items()):
            out.append([cond, f"{length:g}", r.n, f"{r.segment_accuracy:.1f}",
                        f"{r.audio_accuracy:.1f}", r.localization_failures])
        return out


def evaluate(queries: list[LabeledQuery], index: LshIndex, model: Encoder, fe: FrontendConfig,
             k: int | None = None) -> EvalReport:
    if not queries:
        raise EmptyInputError("empty query set")
    report = EvalReport()
    for q in queries:
        report.add(q, search(fingerprint_query(q.waveform, model, fe), index, k))
    return report
