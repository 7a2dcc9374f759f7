import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from attnfp.config import EngineConfig, EncoderConfig, FrontendConfig, LshConfig, TrainConfig
from attnfp.errors import ConfigError


def test_defaults_carry_reference_values():
    cfg = EngineConfig()
    assert (cfg.frontend.sample_rate, cfg.frontend.n_mels, cfg.frontend.n_frames) == (16000, 64, 96)
    assert cfg.frontend.segment_samples == 15360 and cfg.frontend.hop_samples == 1600
    assert (cfg.lsh.n_tables, cfg.lsh.hash_bits, cfg.lsh.n_probes, cfg.lsh.top_k) == (50, 18, 200, 5)
    t = cfg.train
    assert (t.batch_size, t.temperature, t.epochs, t.lr_base, t.lr_max) == (512, 0.05, 150, 5e-4, 5e-2)
    assert (cfg.encoder.dim, cfg.encoder.attention_scale) == (128, 100)
    cfg.validate()


def test_round_trip_is_identity(tmp_path):
    for cfg in (EngineConfig(), EngineConfig.toy().with_seed(17)):
        assert EngineConfig.loads(cfg.dumps()) == cfg
        cfg.save(tmp_path / "c.toml")
        again = EngineConfig.load(tmp_path / "c.toml")
        assert again == cfg and again.dumps() == cfg.dumps()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30), st.floats(1e-3, 1.0), st.booleans())
def test_round_trip_property(seed, bits, tau, noise):
    cfg = EngineConfig.toy().with_seed(seed)
    cfg = dataclasses.replace(
        cfg,
        lsh=dataclasses.replace(cfg.lsh, hash_bits=bits),
        train=dataclasses.replace(cfg.train, temperature=tau),
        augment=dataclasses.replace(cfg.augment, enable_noise=noise),
    )
    assert EngineConfig.loads(cfg.dumps()) == cfg


def test_partial_document_layers_over_base():
    cfg = EngineConfig.loads("[lsh]\nn_probes = 400\n", base=EngineConfig.toy())
    assert cfg.lsh.n_probes == 400 and cfg.encoder.width == 0.125
    assert EngineConfig.loads("[train]\nlr_max = 1\n").train.lr_max == 1.0


@pytest.mark.parametrize(
    "text",
    [
        "[lsh]\nbogus = 1\n",
        "[nonsense]\nx = 1\n",
        "[lsh]\nn_tables = 'fifty'\n",
        "[lsh]\nn_tables = 5.5\n",
        "[augment]\nenable_noise = 1\n",
        "lsh = 3\n",
        "[lsh\n",
        "[lsh]\nhash_bits = 31\n",
        "[lsh]\nn_probes = 10\n",
        "[train]\nbatch_size = 7\n",
        "[frontend]\nn_frames = 90\n",
        "[encoder]\nn_mels = 32\n",
    ],
)
def test_bad_documents_raise_config_error(text):
    with pytest.raises(ConfigError):
        EngineConfig.loads(text)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        EngineConfig.load(tmp_path / "nope.toml")


def test_full_width_shape_chain():
    chain = EncoderConfig().shape_chain()
    assert chain == [
        (1, 64, 96), (32, 64, 96), (32, 64, 96), (64, 32, 48), (128, 16, 24),
        (256, 8, 12), (512, 4, 6), (1024, 2, 3), (6144,), (128,),
    ]


def test_section_validation():
    with pytest.raises(ConfigError):
        LshConfig(hash_bits=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr_base=1.0, lr_max=0.5).validate()
    with pytest.raises(ConfigError):
        FrontendConfig(hop_ms=0).validate()
