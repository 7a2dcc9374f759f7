import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnfp.config import LshConfig
from attnfp.errors import EmptyInputError, FormatError
from attnfp.index import (
    FingerprintDB,
    FingerprintRecord,
    LshIndex,
    brute_force_query,
    brute_force_top1,
    build,
    db_file_size,
    hash_codes,
    load_db,
    load_index,
    make_hyperplanes,
    probe_sequence,
    save_db,
    save_index,
    tracks_path,
)


def unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def perturb(rng, v, cosine):
    noise = rng.standard_normal(v.shape)
    noise -= (noise * v).sum(axis=1, keepdims=True) * v
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    return cosine * v + math.sqrt(1 - cosine**2) * noise


def random_db(rng, n, d, n_tracks=10):
    return FingerprintDB(rng.integers(0, n_tracks, n), np.arange(n) % 97, unit(rng, n, d).astype(np.float32))


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(21)
    db = random_db(rng, 3000, 32)
    return db, LshIndex(db, LshConfig(n_tables=10, hash_bits=10, n_probes=40, top_k=5, seed=3))


# ---------------------------------------------------------------- build

def test_single_record_in_one_bucket_per_table(rng):
    rec = FingerprintRecord(0, 0, unit(rng, 1, 16)[0])
    index = build([rec], LshConfig())
    assert index.cfg.n_tables == 50
    # the key space holds exactly one entry per table ...
    assert len(index.sorted_keys) == 50
    assert sorted((index.sorted_keys >> np.uint64(32)).tolist()) == list(range(50))
    # ... and it is the bucket of the record's own code
    for t in range(50):
        np.testing.assert_array_equal(index.bucket(t, int(index.codes[0, t])), [0])
        assert len(index.bucket(t, int(index.codes[0, t]) ^ 1)) == 0


def test_identical_vectors_identical_codes(rng):
    v = unit(rng, 1, 24)
    index = build([FingerprintRecord(0, 0, v[0]), FingerprintRecord(1, 5, v[0].copy())], LshConfig())
    np.testing.assert_array_equal(index.codes[0], index.codes[1])


def test_code_bits_match_direct_signs(rng):
    cfg = LshConfig(n_tables=3, hash_bits=8, n_probes=3)
    planes = make_hyperplanes(cfg, 5)
    v = unit(rng, 1, 5)[0]
    planes[1, 4] = v  # +v and -v among the hyperplanes
    planes[2, 0] = -v
    codes = hash_codes(v, planes)[0]
    for t in range(3):
        for b in range(8):
            assert (int(codes[t]) >> b) & 1 == int(np.dot(planes[t, b], v) > 0)
    assert (int(codes[1]) >> 4) & 1 == 1 and int(codes[2]) & 1 == 0


def test_build_is_deterministic(small):
    db, index = small
    again = LshIndex(db, index.cfg)
    np.testing.assert_array_equal(index.codes, again.codes)


def test_every_record_once_per_table(small):
    db, index = small
    counts = np.bincount(index.record_of, minlength=len(db))
    assert np.all(counts == index.cfg.n_tables)


def test_empty_and_mixed_inputs_raise(rng):
    with pytest.raises(EmptyInputError):
        build([], LshConfig())
    with pytest.raises(ValueError):
        build([FingerprintRecord(0, 0, np.ones(3)), FingerprintRecord(0, 1, np.ones(4))], LshConfig())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_codes_invariant_to_positive_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    planes = make_hyperplanes(LshConfig(n_tables=4, hash_bits=12, n_probes=4), 16)
    v = unit(rng, 5, 16)
    np.testing.assert_array_equal(hash_codes(v, planes), hash_codes(scale * v, planes))


def test_collision_rate_matches_angle():
    rng = np.random.default_rng(0)
    n = 100_000
    u, v = unit(rng, n, 8), unit(rng, n, 8)
    theta = np.arccos(np.clip((u * v).sum(axis=1), -1, 1))
    planes = rng.standard_normal((n, 8))
    collide = np.sign((u * planes).sum(axis=1)) == np.sign((v * planes).sum(axis=1))
    assert abs(collide.mean() - np.mean(1 - theta / np.pi)) < 0.02
    # and at a fixed angle
    w = perturb(rng, u, math.cos(1.0))
    collide = np.sign((u * planes).sum(axis=1)) == np.sign((w * planes).sum(axis=1))
    assert abs(collide.mean() - (1 - 1.0 / np.pi)) < 0.02


# ---------------------------------------------------------------- probing

def test_probe_sequence_starts_with_exact_codes(rng):
    proj = rng.standard_normal((4, 6))
    probes = probe_sequence(proj, 10)
    assert len(probes) == 10 and len(set(probes)) == 10
    base = [sum(1 << b for b in range(6) if proj[t, b] > 0) for t in range(4)]
    assert probes[:4] == [(t, base[t]) for t in range(4)]
    # the first flip is the globally smallest margin
    t, b = np.unravel_index(np.argmin(np.abs(proj)), proj.shape)
    assert probes[4] == (t, base[t] ^ (1 << b))


def test_probe_costs_nondecreasing(rng):
    proj = rng.standard_normal((5, 8))
    base = [sum(1 << b for b in range(8) if proj[t, b] > 0) for t in range(5)]
    costs = []
    for t, code in probe_sequence(proj, 200)[5:]:
        flipped = [b for b in range(8) if ((code ^ base[t]) >> b) & 1]
        costs.append(sum(proj[t, b] ** 2 for b in flipped))
    assert all(a <= b + 1e-12 for a, b in zip(costs, costs[1:]))


# ---------------------------------------------------------------- query

def test_stored_vector_ranks_first(small):
    db, index = small
    for i in (0, 17, 2999):
        top = index.query(db.embeddings[i], k=1)[0]
        assert top.record_id == i and top.similarity == pytest.approx(1.0, abs=1e-6)


def test_large_k_returns_all_candidates(small):
    db, index = small
    q = db.embeddings[5]
    cands = index.candidates(q)
    out = index.query(q, k=10**6)
    assert len(out) == len(cands)
    assert sorted(m.record_id for m in out) == sorted(cands.tolist())


def test_query_is_exact_ranking_of_candidates(small):
    db, index = small
    rng = np.random.default_rng(4)
    for q in perturb(rng, db.embeddings[:20].astype(np.float64), 0.9):
        cands = index.candidates(q)
        got = index.query(q, k=5)
        oracle = brute_force_query(FingerprintDB(db.track_ids[cands], db.segment_indices[cands], db.embeddings[cands]), q, k=5)
        assert [m.similarity for m in got] == [m.similarity for m in oracle]
        assert [cands[m.record_id] for m in oracle] == [m.record_id for m in got]
        sims = [m.similarity for m in got]
        assert sims == sorted(sims, reverse=True)


def test_recall_monotone_in_probes(small):
    db, index = small
    rng = np.random.default_rng(8)
    idx = rng.integers(0, len(db), 300)
    queries = perturb(rng, db.embeddings[idx].astype(np.float64), 0.8)
    truth = brute_force_top1(db, queries)
    recalls = []
    for probes in (10, 20, 40, 80, 160):
        found = [index.query(q, k=1, n_probes=probes) for q in queries]
        recalls.append(np.mean([bool(f) and f[0].record_id == t for f, t in zip(found, truth)]))
        # candidate sets are nested, so per-query hits can only be gained
    assert all(a <= b for a, b in zip(recalls, recalls[1:]))
    assert recalls[-1] > recalls[0]


def test_candidate_sets_nested(small):
    db, index = small
    q = perturb(np.random.default_rng(1), db.embeddings[:1].astype(np.float64), 0.7)[0]
    previous = set()
    for probes in (10, 15, 40, 100):
        current = set(index.candidates(q, probes).tolist())
        assert previous <= current
        previous = current


# ---------------------------------------------------------------- brute force

def test_single_record_store_returns_it(rng):
    db = FingerprintDB([3], [9], unit(rng, 1, 6))
    m = brute_force_query(db, rng.standard_normal(6))[0]
    assert (m.record_id, m.track_id, m.segment_index) == (0, 3, 9)


def test_orthogonal_query_similarity_zero():
    db = FingerprintDB([0, 1], [0, 0], np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    assert brute_force_query(db, [0, 0, 1.0])[0].similarity == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_brute_force_matches_independent_sort(seed):
    rng = np.random.default_rng(seed)
    n = 60
    # few distinct vectors so exact ties are common
    base = unit(rng, 6, 4).astype(np.float32)
    emb = base[rng.integers(0, 6, n)]
    db = FingerprintDB(rng.integers(0, 5, n), rng.integers(0, 20, n), emb)
    q = rng.standard_normal(4)
    got = brute_force_query(db, q, k=n)
    e = db.embeddings.astype(np.float64)
    sims = [(e[i] @ q) / (np.linalg.norm(e[i]) * np.linalg.norm(q)) for i in range(n)]
    order = sorted(range(n), key=lambda i: (-sims[i], int(db.track_ids[i]), int(db.segment_indices[i]), i))
    assert [m.record_id for m in got] == order
    np.testing.assert_allclose([m.similarity for m in got], [sims[i] for i in order], atol=1e-12)


def test_empty_store_raises():
    with pytest.raises((EmptyInputError, ValueError)):
        brute_force_query(FingerprintDB(np.zeros(0), np.zeros(0), np.zeros((0, 4))), np.ones(4))


# ---------------------------------------------------------------- persistence

def test_save_load_round_trip(tmp_path, small):
    db, _ = small
    db.track_names = [f"track {i}é" for i in range(10)]
    path = tmp_path / "ref.afpd"
    save_db(db, path)
    assert path.stat().st_size == db_file_size(len(db), db.dim) == 16 + 3000 * (8 + 128) + 4
    back = load_db(path)
    assert back.embeddings.tobytes() == db.embeddings.tobytes()
    np.testing.assert_array_equal(back.track_ids, db.track_ids)
    np.testing.assert_array_equal(back.segment_indices, db.segment_indices)
    assert back.track_names == db.track_names
    assert tracks_path(path).read_text(encoding="utf-8").splitlines()[1] == "1\ttrack 1é"
    save_db(back, tmp_path / "again.afpd")
    assert (tmp_path / "again.afpd").read_bytes() == path.read_bytes()


def test_queries_identical_after_load(tmp_path, small):
    db, index = small
    path = tmp_path / "ref.afpd"
    save_index(index, path, hop_seconds=0.1)
    loaded, hop = load_index(path)
    assert hop == 0.1 and loaded.cfg == index.cfg
    rng = np.random.default_rng(2)
    for q in perturb(rng, db.embeddings[:25].astype(np.float64), 0.85):
        assert loaded.query(q) == index.query(q)


def test_header_layout(tmp_path):
    db = FingerprintDB([1, 2], [3, 4], np.eye(2, 5))
    path = tmp_path / "x.afpd"
    save_db(db, path)
    data = path.read_bytes()
    assert struct.unpack_from("<4sHHQ", data) == (b"AFPD", 1, 5, 2)
    assert struct.unpack_from("<II5f", data, 16) == (1, 3, 1.0, 0.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("corruption", ["magic", "crc", "payload", "truncate", "version"])
def test_corruption_rejected(tmp_path, corruption):
    db = FingerprintDB([1, 2], [3, 4], np.eye(2, 5))
    path = tmp_path / "x.afpd"
    save_db(db, path)
    data = bytearray(path.read_bytes())
    if corruption == "magic":
        data[0:4] = b"RIFF"
    elif corruption == "crc":
        data[-1] ^= 0xFF
    elif corruption == "payload":
        data[20] ^= 0x01
    elif corruption == "truncate":
        data = data[:-10]
    else:
        data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_db(path)


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        load_db(tmp_path / "absent.afpd")
