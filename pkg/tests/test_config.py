import json

import pytest

from diabrisk.config import ConfigError, build_config, derive_seed, load_config


def test_desk_defaults():
    cfg = build_config()
    assert cfg.profile == "desk" and cfg.seed == 42
    assert cfg.features.vocab_size == 500 and cfg.generator.n_features == 8


def test_paper_profile_and_override_order():
    cfg = build_config("paper", {"tagger": {"max_epochs": 2}})
    assert cfg.tagger.embed_dim == 300 and cfg.features.vocab_size == 10000
    assert cfg.tagger.max_epochs == 2
    assert build_config("paper", {"lr": {"C": 1.0}}).lr.C == 1.0


def test_errors():
    with pytest.raises(ConfigError):
        build_config("huge")
    with pytest.raises(ConfigError):
        build_config(overrides={"gb": {"not_a_field": 1}})
    with pytest.raises(ConfigError):
        build_config(overrides={"gb": 3})
    with pytest.raises(ConfigError):
        build_config(overrides={"evaluation": {"k": 1}})


def test_load_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"profile": "paper", "seed": 1}))
    assert load_config(path).profile == "paper"
    cfg = load_config(path, profile="desk", seed=9)
    assert (cfg.profile, cfg.seed) == ("desk", 9)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(path)


def test_derive_seed():
    assert derive_seed(42, "generate") == derive_seed(42, "generate")
    assert derive_seed(42, "generate") != derive_seed(42, "tagger")
    assert derive_seed(42, "generate") != derive_seed(43, "generate")
    assert 0 <= derive_seed(0, "x") < 2 ** 32


def test_digest_tracks_content():
    assert build_config().digest() == build_config().digest()
    assert build_config().digest() != build_config(seed=1).digest()
