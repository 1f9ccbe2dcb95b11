"""Config grammar, schema validation, layering, and render round-trips."""

import pytest

from unisiam.config import (ENV_SEED, SCHEMA, Config, build_episode_spec,
                            build_loss_config, build_probe_config,
                            build_train_config, build_world,
                            load_config_file, parse_config_text,
                            parse_rho_grid, parse_value, resolve)
from unisiam.errors import ConfigError


def test_defaults_resolve():
    cfg = resolve(env={})
    assert cfg["train.regime"] == "unisiam"
    assert cfg["train.epochs"] == 100
    assert cfg["loss.temperature"] == 2.0
    assert cfg["eval.episodes"] == 600
    assert cfg["mi.rho"] == (0.1, 0.3, 0.5, 0.7, 0.9)
    assert cfg["mi.seeds"] == (0,)
    assert set(cfg.values) == set(SCHEMA)


def test_grammar_comments_and_blanks():
    raw = parse_config_text(
        "# full-line comment\n"
        "\n"
        "train.lr = 0.05   # trailing comment\n"
        "  loss.alpha=0.25\n")
    assert raw == {"train.lr": "0.05", "loss.alpha": "0.25"}


def test_grammar_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("train.lr = 0.1\ntrain.lr = 0.2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("just words\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("\n\nnodot = 4\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("a.b.c = 4\n")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown config key: train.foo"):
        resolve(file_values={"train.foo": "1"})
    with pytest.raises(ConfigError, match="unknown config key: world.extra"):
        resolve(overrides={"world.extra": "1"})
    with pytest.raises(ConfigError, match="unknown config key"):
        resolve(env={})["no.such"]


def test_type_and_range_validation():
    with pytest.raises(ConfigError, match="integer"):
        parse_value("train.epochs", "ten")
    with pytest.raises(ConfigError, match=">= 1"):
        parse_value("train.epochs", "0")
    with pytest.raises(ConfigError, match="> 0.0"):
        parse_value("loss.temperature", "0")
    with pytest.raises(ConfigError, match="<= 1.0"):
        parse_value("loss.alpha", "1.5")
    with pytest.raises(ConfigError, match="finite"):
        parse_value("train.lr", "inf")
    with pytest.raises(ConfigError, match="must be one of"):
        parse_value("train.regime", "byol")
    assert parse_value("train.lr", "3e-2") == 0.03
    assert parse_value("mi.seeds", "1, 2,3") == (1, 2, 3)


def test_rho_grid():
    grid = parse_rho_grid("0.1:0.9:0.2")
    assert len(grid) == 5
    for got, want in zip(grid, (0.1, 0.3, 0.5, 0.7, 0.9)):
        assert got == pytest.approx(want, abs=1e-12)
    assert parse_rho_grid("0.5") == (0.5,)
    assert parse_rho_grid("0.2,0.4") == (0.2, 0.4)
    with pytest.raises(ConfigError):
        parse_rho_grid("0.1:0.9")
    with pytest.raises(ConfigError):
        parse_rho_grid("0.9:0.1:0.2")
    with pytest.raises(ConfigError):
        parse_rho_grid("a:b:c")
    with pytest.raises(ConfigError, match="<= 1.0"):
        parse_value("mi.rho", "0.5,1.5")


def test_env_seed_fallback():
    cfg = resolve(env={ENV_SEED: "7"})
    assert cfg["world.seed"] == 7
    assert cfg["train.seed"] == 7
    assert cfg["eval.seed"] == 7
    assert cfg["mi.seeds"] == (7,)
    # other keys untouched
    assert cfg["train.lr"] == 0.1
    with pytest.raises(ConfigError):
        resolve(env={ENV_SEED: "-3"})


def test_layer_precedence():
    cfg = resolve(file_values={"train.seed": "5", "train.lr": "0.2"},
                  overrides={"train.lr": "0.3"},
                  env={ENV_SEED: "9"})
    assert cfg["train.lr"] == 0.3          # override beats file
    assert cfg["train.seed"] == 5          # file beats env
    assert cfg["world.seed"] == 9          # env beats default
    assert cfg["eval.seed"] == 9


def test_render_roundtrip():
    cfg = resolve(overrides={"train.lr": "0.007", "mi.rho": "0.1:0.9:0.2",
                             "loss.neg_policy": "exclude-self"}, env={})
    text = cfg.render()
    again = resolve(file_values=parse_config_text(text), env={})
    assert again.values == cfg.values
    # keys are sorted and one per line
    keys = [line.split(" = ")[0] for line in text.strip().splitlines()]
    assert keys == sorted(SCHEMA)


def test_section_view():
    cfg = resolve(env={})
    loss = cfg.section("loss")
    assert set(loss) == {"temperature", "uniformity_weight", "alpha", "neg_policy"}
    assert loss["alpha"] == 0.5


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 7\n# comment\neval.n_way = 3\n")
    cfg = resolve(file_values=load_config_file(path), env={})
    assert cfg["train.epochs"] == 7
    assert cfg["eval.n_way"] == 3


def test_bridges_build_library_objects():
    cfg = resolve(overrides={"train.regime": "nce", "train.epochs": "3",
                             "loss.alpha": "0.25", "eval.n_way": "4",
                             "eval.max_iter": "50", "world.class_count": "8",
                             "world.per_class": "10", "world.ambient_dim": "6",
                             "world.latent_dim": "3"},
                  env={})
    tc = build_train_config(cfg)
    assert tc.regime == "nce" and tc.epochs == 3 and tc.loss.alpha == 0.25
    spec = build_episode_spec(cfg)
    assert spec.n_way == 4 and spec.episodes == 600
    probe = build_probe_config(cfg)
    assert probe.max_iter == 50 and probe.power == 0.5
    lc = build_loss_config(cfg)
    assert lc.alpha == 0.25
    world, pools = build_world(cfg)
    assert world.class_count == 8 and pools["train"].dim == 6


def test_config_eval_every_matches_trainer_default():
    cfg = resolve(env={})
    assert build_train_config(cfg).eval_every == 25


def test_direct_config_requires_known_key():
    cfg = Config({"train.lr": 0.1})
    assert cfg["train.lr"] == 0.1
    with pytest.raises(ConfigError):
        cfg["bogus.key"]
