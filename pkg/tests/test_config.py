import pytest

from upreid.config import (ConfigError, TrainConfig, build_config, coerce, load_config_file, parse_config_text,
                           render_config, tiny_config)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.M, cfg.m, cfg.tau1, cfg.tau2, cfg.lambda_g, cfg.lambda_p) == (8, 0.9, 0.1, 0.1, 0.8, 0.2)
    assert (cfg.batch_size, cfg.N, cfg.learning_rate, cfg.D) == (32, 4096, 0.05, 128)
    assert cfg.mining == "horizontally_symmetric"


@pytest.mark.parametrize("change", [{"batch_size": 1}, {"M": 5}, {"m": 1.0}, {"mining": "best"},
                                    {"tau1": 0.0}, {"dtype": "float16"}, {"batch_size": 64, "N": 32}])
def test_invalid(change):
    with pytest.raises(ConfigError):
        TrainConfig().replace(**change)


def test_grammar():
    text = """
    # comment
    M = 4          # trailing comment
    crop_scale_range = 0.5, 1.0
    mining = online
    """
    values = parse_config_text(text)
    assert values == {"M": 4, "crop_scale_range": (0.5, 1.0), "mining": "online"}
    cfg = build_config(values)
    assert cfg.aug.crop_scale_range == (0.5, 1.0)
    assert cfg.mining == "online_hardest_positive"


@pytest.mark.parametrize("text, match", [("bogus = 1", "bogus"), ("M 4", "key = value"),
                                         ("M = 4\nM = 6", "duplicate"), ("M = four", "M")])
def test_grammar_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_flags_override_and_report(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("steps = 10\nseed = 1\n")
    messages = []
    cfg = build_config(load_config_file(path), {"steps": 20, "seed": 1, "mining": None}, log=messages.append)
    assert cfg.steps == 20 and cfg.seed == 1
    assert len(messages) == 1 and "steps" in messages[0]


def test_seed_env_fallback(monkeypatch):
    monkeypatch.setenv("UPREID_SEED", "17")
    assert build_config({}).seed == 17
    assert build_config({"seed": 3}).seed == 3


def test_render_round_trip():
    cfg = TrainConfig(M=4, channels=(8, 8, 16)).replace(blur_prob=0.25)
    assert build_config(parse_config_text(render_config(cfg))) == cfg


def test_tiny_config():
    cfg = tiny_config()
    assert (cfg.batch_size, cfg.M, cfg.D, cfg.N, cfg.dtype) == (4, 4, 8, 16, "float64")


def test_coerce_lists():
    assert coerce("channels", [4, 8]) == (4, 8)
    with pytest.raises(ConfigError):
        coerce("nope", "1")
