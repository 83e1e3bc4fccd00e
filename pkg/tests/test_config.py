import pytest

from zprl.config import (
    ExperimentConfig,
    load_config,
    parse_config,
    serialize_config,
)
from zprl.dists import LOG_STD_MAX, LOG_STD_MIN
from zprl.errors import ConfigError


def test_empty_document_yields_full_defaults():
    cfg = parse_config("")
    assert cfg.offline.beta == 1e-4
    assert cfg.online.gamma == 0.99
    assert cfg.online.tau == 0.005
    assert cfg.online.batch == 256
    assert cfg.online.actor_lr == 1e-4
    assert cfg.online.critic_lr == 3e-4
    assert cfg.online.init_temperature == 0.01
    assert cfg.offline.d_z == 16
    assert cfg.offline.dim_c == 64
    assert cfg.online.interface == "zprl"
    assert cfg.online.lam == "auto"
    assert cfg.offline.schedule == (1.0, 0.01, 0.0)
    assert (LOG_STD_MIN, LOG_STD_MAX) == (-10.0, 2.0)
    assert cfg == ExperimentConfig()


def test_unknown_key_is_named_in_the_error():
    with pytest.raises(ConfigError, match="gama"):
        parse_config("[online]\ngama = 0.5\n")
    with pytest.raises(ConfigError, match="speling"):
        parse_config("speling = 1\n")


def test_round_trip_preserves_overrides():
    text = """
env = "push2d"
seed = 7

[demos]
n = 20

[offline]
epochs = 5
d_z = 4
enc_hidden = [16, 16]

[online]
lambda = 0.25
interface = "action"
total_env_steps = 1000
"""
    cfg = parse_config(text)
    assert cfg.env == "push2d"
    assert cfg.online.lam == 0.25
    assert cfg.offline.enc_hidden == (16, 16)
    again = parse_config(serialize_config(cfg))
    assert again == cfg


def test_default_round_trip_is_stable():
    cfg = ExperimentConfig()
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_lambda_alias_is_used_in_both_directions():
    cfg = parse_config('[online]\nlambda = 0.2\n')
    assert cfg.online.lam == 0.2
    text = serialize_config(cfg)
    assert "lambda = 0.2" in text
    assert "\nlam =" not in text


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[online]\ngamma = 0.0\n", "gamma"),
        ("[online]\ngamma = 1.5\n", "gamma"),
        ("[online]\ninterface = \"weightspace\"\n", "interface"),
        ("[online]\nlambda = -0.5\n", "lambda"),
        ("[online]\nlambda = \"fast\"\n", "lambda"),
        ("[online]\nbatch = 0\n", "batch"),
        ("[offline]\nbeta = -1.0\n", "beta"),
        ("[offline]\nschedule = [0.5, 1.0, 0.0]\n", "schedule"),
        ("[demos]\nclean_fraction = 1.5\n", "clean_fraction"),
        ("env = \"mars\"\n", "env"),
    ],
)
def test_invariant_violations_name_the_key(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[online]\nbatch = 1.5\n", "integer"),
        ("seed = true\n", "integer"),
        ("[offline]\nvib_enabled = 1\n", "boolean"),
        ("[offline]\nenc_hidden = 32\n", "list"),
    ],
)
def test_type_mismatches_are_rejected(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_invalid_toml_is_a_config_error():
    with pytest.raises(ConfigError, match="TOML"):
        parse_config("[online\nbatch = 1")


def test_load_config_names_a_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="nope.toml"):
        load_config(tmp_path / "nope.toml")
