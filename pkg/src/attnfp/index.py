"""Reference database of subfingerprints and a multi-table, multi-probe sign-LSH index.

Each table hashes a unit vector by the signs of ``hash_bits`` random Gaussian
hyperplane projections.  A lookup visits the exact bucket in every table and
then the lowest-cost bit-flip perturbations across all tables, where the cost
of a perturbation is the sum of squared hyperplane margins of the flipped
bits.  Candidates are re-ranked by exact cosine similarity.
"""
from __future__ import annotations

import heapq
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import LshConfig
from .errors import EmptyInputError, FormatError

DB_MAGIC = b"AFPD"
DB_VERSION = 1
DB_HEADER = struct.Struct("<4sHHQ")


@dataclass(frozen=True)
class FingerprintRecord:
    track_id: int
    segment_index: int
    embedding: np.ndarray

    def timestamp(self, hop_seconds: float) -> float:
        return self.segment_index * hop_seconds


@dataclass(frozen=True)
class Match:
    record_id: int
    track_id: int
    segment_index: int
    similarity: float


@dataclass
class FingerprintDB:
    """Columnar record store: one row per subfingerprint."""

    track_ids: np.ndarray
    segment_indices: np.ndarray
    embeddings: np.ndarray
    track_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.track_ids = np.ascontiguousarray(self.track_ids, dtype=np.uint32)
        self.segment_indices = np.ascontiguousarray(self.segment_indices, dtype=np.uint32)
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be a 2-D array")
        n = len(self.embeddings)
        if len(self.track_ids) != n or len(self.segment_indices) != n:
            raise ValueError("column lengths differ")

    @classmethod
    def from_records(cls, records, track_names: list[str] | None = None) -> "FingerprintDB":
        records = list(records)
        if not records:
            raise EmptyInputError("no fingerprint records")
        dims = {np.asarray(r.embedding).shape for r in records}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError(f"records have mixed embedding shapes {sorted(dims)}")
        return cls(
            np.array([r.track_id for r in records]),
            np.array([r.segment_index for r in records]),
            np.stack([np.asarray(r.embedding) for r in records]),
            list(track_names or []),
        )

    def __len__(self) -> int:
        return len(self.embeddings)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def record(self, i: int) -> FingerprintRecord:
        return FingerprintRecord(
            int(self.track_ids[i]), int(self.segment_indices[i]), self.embeddings[i]
        )

    def track_name(self, track_id: int) -> str:
        if 0 <= track_id < len(self.track_names):
            return self.track_names[track_id]
        return str(track_id)


# --------------------------------------------------------------------------- exact search


def exact_similarities(emb64: np.ndarray, norms: np.ndarray, ids: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Cosine similarity of rows ``ids`` with q; row-wise sums so results do not depend on ``ids``."""
    q = np.asarray(q, dtype=np.float64)
    return (emb64[ids] * q).sum(axis=1) / (norms[ids] * np.linalg.norm(q))


def rank(db: FingerprintDB, ids: np.ndarray, sims: np.ndarray, k: int) -> list[Match]:
    """Top-k by similarity, ties by (track_id, segment_index, record id) ascending."""
    order = np.lexsort((ids, db.segment_indices[ids], db.track_ids[ids], -sims))[:k]
    return [
        Match(int(ids[j]), int(db.track_ids[ids[j]]), int(db.segment_indices[ids[j]]), float(sims[j]))
        for j in order
    ]


class _ExactStore:
    def __init__(self, db: FingerprintDB):
        self.db = db
        self.emb64 = db.embeddings.astype(np.float64)
        self.norms = np.sqrt((self.emb64 * self.emb64).sum(axis=1))


def brute_force_query(db: FingerprintDB | _ExactStore, q, k: int = 1) -> list[Match]:
    store = db if isinstance(db, _ExactStore) else _ExactStore(db)
    if len(store.db) == 0:
        raise EmptyInputError("empty record store")
    ids = np.arange(len(store.db))
    return rank(store.db, ids, exact_similarities(store.emb64, store.norms, ids, q), k)


def brute_force_top1(db: FingerprintDB, queries: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Record id of the exact nearest neighbour for each query row (matrix-product scan)."""
    emb = db.embeddings.astype(np.float64)
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    out = np.empty(len(queries), dtype=np.int64)
    for i in range(0, len(queries), chunk):
        q = np.asarray(queries[i : i + chunk], dtype=np.float64)
        out[i : i + chunk] = np.argmax(q @ emb.T, axis=1)
    return out


# --------------------------------------------------------------------------- LSH


def make_hyperplanes(cfg: LshConfig, dim: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal((cfg.n_tables, cfg.hash_bits, dim))


def projections(vectors: np.ndarray, hyperplanes: np.ndarray) -> np.ndarray:
    """(n, tables, bits) hyperplane dot products."""
    t, b, d = hyperplanes.shape
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, d)
    return (v @ hyperplanes.reshape(t * b, d).T).reshape(-1, t, b)


def codes_from_projections(proj: np.ndarray) -> np.ndarray:
    weights = np.uint32(1) << np.arange(proj.shape[-1], dtype=np.uint32)
    return ((proj > 0).astype(np.uint32) * weights).sum(axis=-1, dtype=np.uint32)


def hash_codes(vectors: np.ndarray, hyperplanes: np.ndarray) -> np.ndarray:
    return codes_from_projections(projections(vectors, hyperplanes))


def probe_sequence(proj: np.ndarray, n_probes: int) -> list[tuple[int, int]]:
    """(table, code) pairs: every table's own code, then margin-ordered bit flips.

    ``proj`` is the (tables, bits) projection of a single query.
    """
    n_tables, n_bits = proj.shape
    base = codes_from_projections(proj)
    probes = [(t, int(base[t])) for t in range(n_tables)][:n_probes]
    extra = n_probes - len(probes)
    if extra <= 0:
        return probes
    margins = np.abs(proj)
    order = np.argsort(margins, axis=1, kind="stable")
    cost = np.take_along_axis(margins, order, axis=1) ** 2
    heap = [(float(cost[t, 0]), t, (0,)) for t in range(n_tables)]
    heapq.heapify(heap)
    while heap and extra > 0:
        score, t, positions = heapq.heappop(heap)
        flip = 0
        for j in positions:
            flip |= 1 << int(order[t, j])
        probes.append((t, int(base[t]) ^ flip))
        extra -= 1
        last = positions[-1]
        if last + 1 < n_bits:
            step = float(cost[t, last + 1])
            heapq.heappush(heap, (score - float(cost[t, last]) + step, t, positions[:-1] + (last + 1,)))
            heapq.heappush(heap, (score + step, t, positions + (last + 1,)))
    return probes


class LshIndex:
    def __init__(self, db: FingerprintDB, cfg: LshConfig, chunk: int = 8192):
        if len(db) == 0:
            raise EmptyInputError("cannot index an empty database")
        cfg.validate()
        self.db, self.cfg = db, cfg
        self.exact = _ExactStore(db)
        self.hyperplanes = make_hyperplanes(cfg, db.dim)
        codes = np.empty((len(db), cfg.n_tables), dtype=np.uint32)
        for i in range(0, len(db), chunk):
            codes[i : i + chunk] = hash_codes(db.embeddings[i : i + chunk], self.hyperplanes)
        self.codes = codes
        # one sorted key space for all tables: key = table << 32 | code
        keys = (np.arange(cfg.n_tables, dtype=np.uint64) << np.uint64(32)) + codes.astype(np.uint64)
        flat = keys.T.ravel()
        order = np.argsort(flat, kind="stable")
        self.sorted_keys = flat[order]
        self.record_of = (order % len(db)).astype(np.int64)

    def __len__(self):
        return len(self.db)

    def bucket(self, table: int, code: int) -> np.ndarray:
        return self._lookup(np.array([table]), np.array([code]))

    def _lookup(self, tables: np.ndarray, codes: np.ndarray) -> np.ndarray:
        keys = (tables.astype(np.uint64) << np.uint64(32)) + codes.astype(np.uint64)
        lo = np.searchsorted(self.sorted_keys, keys, side="left")
        hi = np.searchsorted(self.sorted_keys, keys, side="right")
        if not np.any(hi > lo):
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.record_of[a:b] for a, b in zip(lo, hi) if b > a])

    def candidates(self, q, n_probes: int | None = None) -> np.ndarray:
        n_probes = self.cfg.n_probes if n_probes is None else n_probes
        proj = projections(q, self.hyperplanes)[0]
        probes = np.array(probe_sequence(proj, n_probes), dtype=np.int64).reshape(-1, 2)
        return np.unique(self._lookup(probes[:, 0], probes[:, 1]))

    def query(self, q, k: int | None = None, n_probes: int | None = None) -> list[Match]:
        k = self.cfg.top_k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        ids = self.candidates(q, n_probes)
        if len(ids) == 0:
            return []
        sims = exact_similarities(self.exact.emb64, self.exact.norms, ids, q)
        return rank(self.db, ids, sims, k)

    def brute_force(self, q, k: int | None = None) -> list[Match]:
        return brute_force_query(self.exact, q, self.cfg.top_k if k is None else k)


def build(records, cfg: LshConfig, track_names: list[str] | None = None) -> LshIndex:
    db = records if isinstance(records, FingerprintDB) else FingerprintDB.from_records(records, track_names)
    return LshIndex(db, cfg)


# --------------------------------------------------------------------------- persistence


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([("track", "<u4"), ("segment", "<u4"), ("embedding", "<f4", (dim,))])


def db_file_size(count: int, dim: int) -> int:
    return DB_HEADER.size + count * (8 + 4 * dim) + 4


def save_db(db: FingerprintDB, path: str | Path) -> None:
    path = Path(path)
    rows = np.empty(len(db), dtype=record_dtype(db.dim))
    rows["track"], rows["segment"], rows["embedding"] = db.track_ids, db.segment_indices, db.embeddings
    payload = DB_HEADER.pack(DB_MAGIC, DB_VERSION, db.dim, len(db)) + rows.tobytes()
    path.write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))
    with open(tracks_path(path), "w", encoding="utf-8", newline="\n") as fh:
        for i, name in enumerate(db.track_names):
            fh.write(f"{i}\t{name}\n")


def load_db(path: str | Path) -> FingerprintDB:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read database {path}: {exc}") from exc
    if len(data) < DB_HEADER.size + 4:
        raise FormatError(f"{path}: truncated database header")
    magic, version, dim, count = DB_HEADER.unpack_from(data)
    if magic != DB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, not a fingerprint database")
    if version != DB_VERSION:
        raise FormatError(f"{path}: unsupported database version {version}")
    if len(data) != db_file_size(count, dim):
        raise FormatError(f"{path}: expected {db_file_size(count, dim)} bytes, found {len(data)}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError(f"{path}: checksum mismatch")
    rows = np.frombuffer(data, dtype=record_dtype(dim), count=count, offset=DB_HEADER.size)
    return FingerprintDB(
        rows["track"].copy(), rows["segment"].copy(), rows["embedding"].copy(), _read_tracks(path)
    )


def tracks_path(path: Path) -> Path:
    return path.with_name(path.name + ".tracks.tsv")


def meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".lsh.json")


def _read_tracks(path: Path) -> list[str]:
    tsv = tracks_path(path)
    if not tsv.exists():
        return []
    names: dict[int, str] = {}
    for lineno, line in enumerate(tsv.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        try:
            tid, name = line.split("\t", 1)
            names[int(tid)] = name
        except ValueError as exc:
            raise FormatError(f"{tsv}:{lineno}: expected 'track_id<TAB>name'") from exc
    return [names.get(i, str(i)) for i in range(max(names) + 1)] if names else []


def save_index(index: LshIndex, path: str | Path, hop_seconds: float = 0.1) -> None:
    """Database file, track-name TSV, and the LSH config the index is rebuilt from."""
    path = Path(path)
    save_db(index.db, path)
    meta = dict(vars(index.cfg), hop_seconds=hop_seconds)
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def load_index(path: str | Path, cfg: LshConfig | None = None) -> tuple[LshIndex, float]:
    """Returns the rebuilt index and the segment hop in seconds."""
    path = Path(path)
    db = load_db(path)
    hop = 0.1
    mp = meta_path(path)
    if mp.exists():
        try:
            meta = json.loads(mp.read_text(encoding="utf-8"))
            hop = float(meta.pop("hop_seconds", hop))
            stored = LshConfig(**meta)
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{mp}: malformed index metadata ({exc})") from exc
        cfg = cfg or stored
    return LshIndex(db, cfg or LshConfig()), hop
