import json

import numpy as np
import pytest

from attnfp import audio_io
from attnfp.cli import read_manifest, run
from attnfp.config import EngineConfig
from attnfp.encoder import build_encoder, save_checkpoint
from attnfp.index import db_file_size, load_db, meta_path, tracks_path
from attnfp.synthetic import synth_track


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    for i in range(10):
        audio_io.write_wav(root / "corpus" / f"song_{i:02d}.wav", synth_track(2.5, 16000, rng))
    save_checkpoint(build_encoder(EngineConfig.toy().encoder, seed=0), root / "toy.ckpt")
    code = run(["ingest", "--corpus", str(root / "corpus"), "--checkpoint", str(root / "toy.ckpt"),
                "--out", str(root / "ref.afpd"), "--threads", "2"])
    assert code == 0
    return root


def test_ingest_ten_tracks(workspace):
    db = load_db(workspace / "ref.afpd")
    assert sorted(set(db.track_ids.tolist())) == list(range(10))
    assert len(db) == 10 * 16
    assert db.track_names == [f"song_{i:02d}" for i in range(10)]
    assert meta_path(workspace / "ref.afpd").exists()


def test_query_verbatim_clip(workspace, capsys):
    track = audio_io.read_wav(workspace / "corpus" / "song_07.wav")
    first = 8 * 1600
    audio_io.write_wav(workspace / "clip.wav", track.samples[first : first + 16000], 16000)
    capsys.readouterr()
    code = run(["query", "--db", str(workspace / "ref.afpd"), "--checkpoint", str(workspace / "toy.ckpt"),
                str(workspace / "clip.wav"), "--json"])
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert code == 0 and out["track"] == "song_07"
    assert abs(out["timestamp"] - 0.8) <= 0.05


def test_query_text_line(workspace, capsys):
    track = audio_io.read_wav(workspace / "corpus" / "song_03.wav")
    audio_io.write_wav(workspace / "clip3.wav", track.samples[:16000], 16000)
    capsys.readouterr()
    assert run(["query", "--db", str(workspace / "ref.afpd"), "--checkpoint", str(workspace / "toy.ckpt"),
                str(workspace / "clip3.wav")]) == 0
    assert capsys.readouterr().out.startswith("song_03 t=0.00s consistency=1.00")


def test_eval_manifest(workspace, tmp_path, capsys):
    track = audio_io.read_wav(workspace / "corpus" / "song_02.wav")
    audio_io.write_wav(tmp_path / "q.wav", track.samples[3200 : 3200 + 20000], 16000)
    manifest = tmp_path / "m.tsv"
    manifest.write_text("query_path\ttrack_name\ttrue_start_s\tcondition\nq.wav\tsong_02\t0.2\tclean\n")
    out = tmp_path / "acc.csv"
    assert run(["eval", "--db", str(workspace / "ref.afpd"), "--checkpoint", str(workspace / "toy.ckpt"),
                "--manifest", str(manifest), "--out", str(out), "--threads", "1"]) == 0
    rows = out.read_text().splitlines()
    assert rows[1] == "clean,1.25,1,100.0,100.0,0"


def test_bench_empty_manifest(workspace, tmp_path, capsys):
    manifest = tmp_path / "empty.tsv"
    manifest.write_text("")
    capsys.readouterr()
    code = run(["bench", "--db", str(workspace / "ref.afpd"), "--manifest", str(manifest), "--lookups", "50"])
    report = json.loads(capsys.readouterr().out)
    assert code == 0 and report["queries"] == 0 and report["query_latency"] == {}
    db_path = workspace / "ref.afpd"
    assert report["database_bytes"] == db_file_size(160, 128) == 16 + 160 * (8 + 4 * 128) + 4
    assert report["tracks_tsv_bytes"] == tracks_path(db_path).stat().st_size
    assert report["recall_at_1_vs_oracle"] > 0.9


def test_unknown_flag_exits_2(capsys):
    assert run(["ingest", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run([]) == 2


def test_bad_config_exits_2(tmp_path, workspace):
    bad = tmp_path / "bad.toml"
    bad.write_text("[lsh]\nhash_bits = 99\n")
    assert run(["bench", "--db", str(workspace / "ref.afpd"), "--config", str(bad)]) == 2


def test_malformed_files_exit_1(tmp_path, workspace, capsys):
    junk = tmp_path / "junk.afpd"
    junk.write_bytes(b"not a database at all")
    assert run(["bench", "--db", str(junk)]) == 1
    assert run(["query", "--db", str(workspace / "ref.afpd"), "--checkpoint", str(junk),
                str(workspace / "clip.wav")]) == 1
    assert "error" in capsys.readouterr().err


def test_read_manifest_relative_paths(tmp_path):
    m = tmp_path / "m.tsv"
    m.write_text("a.wav\tx\t1.5\nb.wav\ty\t0\tnoisy\n")
    assert read_manifest(m) == [(tmp_path / "a.wav", "x", 1.5, "unlabeled"), (tmp_path / "b.wav", "y", 0.0, "noisy")]


def test_synth_layout(tmp_path):
    code = run(["synth", "--out", str(tmp_path), "--tracks", "2", "--duration", "1.5",
                "--noises", "2", "--noise-duration", "1", "--t60", "0.3", "--seed", "4"])
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "corpus").iterdir()) == ["track_0000.wav", "track_0001.wav"]
    assert sorted(p.name for p in (tmp_path / "noise").iterdir()) == ["pink_01.wav", "white_00.wav"]
    rirs = audio_io.load_rir_bank(tmp_path / "rir", 16000)
    assert len(rirs) == 1 and rirs[0].t60 == pytest.approx(0.3)
    w = audio_io.read_wav(tmp_path / "corpus" / "track_0000.wav")
    assert (w.sample_rate, len(w.samples)) == (16000, 24000)


def test_synth_deterministic_by_seed(tmp_path):
    args = ["synth", "--tracks", "1", "--duration", "1.0", "--noises", "1", "--noise-duration", "1", "--t60", "0.2"]
    run(args + ["--out", str(tmp_path / "a"), "--seed", "9"])
    run(args + ["--out", str(tmp_path / "b"), "--seed", "9"])
    for sub in ("corpus/track_0000.wav", "noise/white_00.wav"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()


def test_train_writes_checkpoint_and_log(tmp_path):
    assert run(["synth", "--out", str(tmp_path), "--tracks", "2", "--duration", "2",
                "--noises", "1", "--noise-duration", "2", "--t60", "0.3"]) == 0
    cfg = tmp_path / "tiny.toml"
    cfg.write_text("[train]\nbatch_size = 4\nsteps_per_epoch = 1\nlr_ramp_epochs = 1\n")
    ck = tmp_path / "m.ckpt"
    code = run(["train", "--toy", "--config", str(cfg), "--epochs", "2", "--corpus", str(tmp_path / "corpus"),
                "--noise", str(tmp_path / "noise"), "--rir", str(tmp_path / "rir"), "--out", str(ck)])
    assert code == 0 and ck.stat().st_size > 0
    assert (tmp_path / "m.ckpt.csv").read_text().splitlines()[0] == "epoch,lr,mean_loss"
