import subprocess
import sys

import pytest

from videoseq.cli import main, parse_train_config


@pytest.fixture()
def workdir(tmp_path):
    data = tmp_path / "data.bin"
    rc = main([
        "gen-data", "--vocab", "6", "--videos", "16", "--seed", "3",
        "--noise", "0.3", "--out", str(data),
        "--max-frames", "8", "--visual-dim", "6", "--audio-dim", "3",
    ])
    assert rc == 0
    config = tmp_path / "train.cfg"
    config.write_text(
        "# tiny run\n"
        "config_version = 1\n"
        "model.kind = video_level\n"
        "model.vocab_size = 6\n"
        "model.visual_dim = 6\n"
        "model.audio_dim = 3\n"
        "model.fc_sizes = 8,6\n"
        "model.seed = 1\n"
        "learning_rate = 0.01\n"
        "batch_size = 8\n"
        "epochs = 2\n"
        "seed = 2\n"
    )
    return tmp_path, data, config


def test_gen_data_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a.bin", tmp_path / "b.bin"
    args = ["gen-data", "--vocab", "4", "--videos", "10", "--seed", "9",
            "--noise", "0.2", "--max-frames", "6", "--visual-dim", "4",
            "--audio-dim", "2"]
    assert main(args + ["--out", str(out_a)]) == 0
    assert main(args + ["--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()


def test_train_predict_eval_pipeline(workdir, capsys):
    tmp_path, data, config = workdir
    ckpt = tmp_path / "model.ckpt"
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(ckpt)]) == 0
    assert ckpt.exists()
    assert (tmp_path / "model.ckpt.log").exists()

    preds = tmp_path / "preds.txt"
    assert main(["predict", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(preds)]) == 0

    capsys.readouterr()
    assert main(["eval", "--predictions", str(preds), "--data", str(data)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("gap@20 ")


def test_ensemble_of_full_scores(workdir):
    tmp_path, data, config = workdir
    ckpt = tmp_path / "model.ckpt"
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(ckpt)]) == 0
    full = tmp_path / "full.txt"
    assert main(["predict", "--checkpoint", str(ckpt), "--data", str(data),
                 "--out", str(full), "--full-scores"]) == 0
    merged = tmp_path / "merged.txt"
    assert main(["ensemble", "--inputs", str(full), str(full), "--out", str(merged)]) == 0
    assert full.read_bytes() == merged.read_bytes()


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--model", "video_level", "--samples", "3"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "head.w1" in out


def test_error_is_one_line_machine_parsable(tmp_path, capsys):
    rc = main(["eval", "--predictions", str(tmp_path / "missing.txt"),
               "--data", str(tmp_path / "missing.bin")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert err.count("\n") == 1


def test_config_parser_rejects_unknown_keys(tmp_path):
    from videoseq import ConfigurationError

    cfg = tmp_path / "bad.cfg"
    cfg.write_text("config_version = 1\nmodel.kind = video_level\n"
                   "model.vocab_size = 5\nturbo = yes\n")
    with pytest.raises(ConfigurationError, match="turbo"):
        parse_train_config(str(cfg))


def test_config_parser_requires_version(tmp_path):
    from videoseq import FormatError

    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model.kind = video_level\nmodel.vocab_size = 5\n")
    with pytest.raises(FormatError):
        parse_train_config(str(cfg))


def test_config_roundtrip_values(tmp_path):
    cfg = tmp_path / "full.cfg"
    cfg.write_text(
        "config_version = 1\n"
        "model.kind = ff_gru\n"
        "model.vocab_size = 9\n"
        "model.hidden_size = 5\n"
        "model.depth = 4\n"
        "model.fc_sizes = 7,9\n"
        "learning_rate = 0.25\n"
        "clip_norm = none\n"
        "epochs = 3\n"
    )
    config = parse_train_config(str(cfg))
    assert config.model.kind == "ff_gru"
    assert config.model.depth == 4
    assert config.learning_rate == 0.25
    assert config.clip_norm is None
    assert config.resolved_clip_norm() == 5.0  # depth >= 4 rule


def test_console_entry_point(tmp_path):
    out = tmp_path / "c.bin"
    result = subprocess.run(
        [sys.executable, "-m", "videoseq.cli", "gen-data", "--vocab", "3",
         "--videos", "2", "--out", str(out), "--max-frames", "4",
         "--visual-dim", "2", "--audio-dim", "1"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert out.exists()
