"""Config parsing/validation and the command-line workflows."""
import numpy as np
import pytest

from kgtn import cli, data, training
from kgtn.config import ExperimentConfig, parse_config, to_ini, write_config
from kgtn.errors import ConfigError


# ---------------------------------------------------------------------------
# config


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("", encoding="utf-8")
    cfg = parse_config(path)
    assert cfg == ExperimentConfig().validate()


def test_flag_overrides_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\nalpha = 0.5\n", encoding="utf-8")
    cfg = parse_config(path, {"alpha": 0.01})
    assert cfg.alpha == 0.01


def test_head_divisibility_rejected():
    with pytest.raises(ConfigError, match="n_heads"):
        parse_config(None, {"n_heads": 5, "embed_dim": 64})


def test_unknown_key_rejected_by_name(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[model]\nmystery_knob = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mystery_knob"):
        parse_config(path)
    with pytest.raises(ConfigError, match="mystery_knob"):
        parse_config(None, {"mystery_knob": 1})


def test_config_round_trip(tmp_path):
    cfg = parse_config(None, {
        "alpha": 0.25, "k_top": "none", "recall_ks": "5 15",
        "share_transformer_weights": True, "lr": 0.0003,
    })
    path = tmp_path / "rt.ini"
    write_config(cfg, path)
    again = parse_config(path)
    assert again == cfg


def test_k_top_none_parses(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[model]\nk_top = none\n", encoding="utf-8")
    assert parse_config(path).k_top is None


def test_invalid_values_rejected():
    for bad in ({"tau": 0.0}, {"lr": -1.0}, {"noise_ratio": 0.9},
                {"batch_size": 1}, {"n_intents": 0}):
        with pytest.raises(ConfigError):
            parse_config(None, bad)


def test_to_ini_is_sectioned():
    text = to_ini(ExperimentConfig())
    assert "[model]" in text and "[train]" in text and "[data]" in text


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture
def synth_dir(tmp_path):
    raw = data.generate_synthetic(12, 16, 22, 2, density=0.5, seed=5)
    data.write_dataset(raw, tmp_path / "data")
    return tmp_path / "data"


def _fast_flags(tmp_path, synth_dir, out):
    cfg = tmp_path / "fast.ini"
    cfg.write_text(
        "[model]\nembed_dim = 8\nn_intents = 2\nn_heads = 2\nk_top = 2\n"
        "[train]\nepochs = 2\nbatch_size = 64\nseed = 5\n"
        "[eval]\nrecall_ks = 2 5\n",
        encoding="utf-8",
    )
    return ["--config", str(cfg), "--data-dir", str(synth_dir), "--out", str(out)]


def test_gen_synth_deterministic(tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    for out in (out1, out2):
        assert cli.main(["gen-synth", "--seed", "7", "--out", str(out)]) == 0
    for name in ("ratings_final.txt", "kg_final.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    assert (out1 / "config.ini").exists()


def test_train_writes_artifacts(tmp_path, synth_dir):
    out = tmp_path / "run"
    assert cli.main(["train", *_fast_flags(tmp_path, synth_dir, out)]) == 0
    assert (out / "checkpoint.bin").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "config.ini").exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss_bpr,loss_cl,loss_reg,eval_auc,eval_f1"
    assert len(lines) == 3


def test_train_zero_epochs_equals_initialization(tmp_path, synth_dir):
    out = tmp_path / "run0"
    flags = _fast_flags(tmp_path, synth_dir, out)
    assert cli.main(["train", *flags, "--epochs", "0"]) == 0
    blob = training.load_checkpoint(out / "checkpoint.bin")
    cfg = parse_config(out / "config.ini")
    ds = data.load_dataset(synth_dir, cfg.split_ratios, cfg.seed)
    fresh = training.ModelParameters.initialize(
        ds.n_users, ds.n_entities, ds.n_relations, cfg, np.random.default_rng(cfg.seed)
    )
    for name, tensor in fresh.named():
        np.testing.assert_array_equal(blob[name], tensor.values)


def test_train_determinism_bitwise(tmp_path, synth_dir):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert cli.main(["train", *_fast_flags(tmp_path, synth_dir, out)]) == 0
        outs.append(out)
    assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
    assert (outs[0] / "checkpoint.bin").read_bytes() == (outs[1] / "checkpoint.bin").read_bytes()


def test_evaluate_loads_checkpoint(tmp_path, synth_dir, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", *_fast_flags(tmp_path, synth_dir, out)]) == 0
    out2 = tmp_path / "eval"
    assert cli.main([
        "evaluate", *_fast_flags(tmp_path, synth_dir, out2),
        "--checkpoint", str(out / "checkpoint.bin"),
    ]) == 0
    assert (out2 / "report.csv").exists()
    assert "checkpoint" in capsys.readouterr().out


def test_evaluate_corrupt_checkpoint_nonzero_exit(tmp_path, synth_dir, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage!" * 4)
    code = cli.main([
        "evaluate", *_fast_flags(tmp_path, synth_dir, tmp_path / "e"),
        "--checkpoint", str(bad),
    ])
    assert code != 0
    assert "magic" in capsys.readouterr().err


def test_missing_data_dir_is_an_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("KGTN_DATA_DIR", raising=False)
    code = cli.main(["train", "--out", str(tmp_path / "x"), "--epochs", "1"])
    assert code != 0
    assert "data directory" in capsys.readouterr().err


def test_env_var_data_dir_fallback(tmp_path, synth_dir, monkeypatch):
    monkeypatch.setenv("KGTN_DATA_DIR", str(synth_dir))
    out = tmp_path / "envrun"
    cfgfile = tmp_path / "fast.ini"
    cfgfile.write_text(
        "[model]\nembed_dim = 8\nn_intents = 2\nn_heads = 2\n"
        "[train]\nepochs = 1\nbatch_size = 64\n",
        encoding="utf-8",
    )
    assert cli.main(["train", "--config", str(cfgfile), "--out", str(out)]) == 0
    assert (out / "checkpoint.bin").exists()


def test_grad_check_command(tmp_path, capsys):
    assert cli.main(["grad-check", "--out", str(tmp_path / "gc")]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert "passed" in out


def test_noise_test_single_ratio(tmp_path, synth_dir):
    out = tmp_path / "noise"
    flags = _fast_flags(tmp_path, synth_dir, out)
    assert cli.main(["noise-test", *flags, "--noise-ratio", "0.1",
                     "--epochs", "1", "--emit-plot-data"]) == 0
    assert (out / "noise.csv").exists()
    assert (out / "noise_noise_drop.csv").exists()


def test_ablate_command(tmp_path, synth_dir):
    out = tmp_path / "abl"
    assert cli.main(["ablate", *_fast_flags(tmp_path, synth_dir, out), "--epochs", "1"]) == 0
    text = (out / "ablation.csv").read_text()
    assert "wo_intents" in text
