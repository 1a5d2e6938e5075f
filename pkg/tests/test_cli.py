from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from activeshot.cli import main
from activeshot.data import load_dataset
from activeshot.service import create_app


@pytest.fixture()
def client():
    with TestClient(create_app()) as c:
        yield c


def run_cli(client, *args: str) -> int:
    return main(list(args), client=client)


def test_cli_data_synth(client, tmp_path, capsys):
    out = tmp_path / "ds.bin"
    code = run_cli(client, "data", "synth", "--classes", "5", "--samples", "8",
                   "--noise", "0.1", "--seed", "2", "--out", str(out))
    assert code == 0
    assert load_dataset(out).num_classes == 5
    assert "5 classes" in capsys.readouterr().out


def test_cli_train_eval_and_jobs(client, tmp_path, capsys):
    data = tmp_path / "ds.bin"
    assert run_cli(client, "data", "synth", "--classes", "6", "--samples", "12",
                   "--out", str(data)) == 0
    out_dir = tmp_path / "run"
    code = run_cli(
        client, "train",
        "--model", "lstm", "--classes", "2", "--cms-multiplier", "0",
        "--batches", "3", "--batch-size", "4", "--seed", "1",
        "--data", str(data), "--out", str(out_dir),
        "--train-classes", "4", "--hidden-size", "16", "--log-every", "2",
        "--eval-batches", "1", "--poll", "0.05",
    )
    captured = capsys.readouterr().out
    assert code == 0
    assert "job" in captured
    assert "instance" in captured  # final table printed
    assert (out_dir / "checkpoint.bin").exists()

    code = run_cli(
        client, "eval",
        "--checkpoint", str(out_dir / "checkpoint.bin"),
        "--batches", "1", "--batch-size", "4",
        "--data", str(data), "--csv", str(tmp_path / "eval.csv"),
        "--poll", "0.05",
    )
    assert code == 0
    assert (tmp_path / "eval.csv").exists()

    assert run_cli(client, "jobs") == 0
    listing = capsys.readouterr().out
    assert "train" in listing and "eval" in listing and "done" in listing


def test_cli_config_file_with_flag_overrides(client, tmp_path, capsys):
    data = tmp_path / "ds.bin"
    run_cli(client, "data", "synth", "--classes", "6", "--samples", "12", "--out", str(data))
    config = tmp_path / "run.conf"
    config.write_text(
        "# desk run defaults\n"
        "model = lstm\n"
        "classes = 2\n"
        "batches = 99\n"
        f"data = {data}\n"
        f"out = {tmp_path / 'from_file'}\n"
        "train_classes = 4\n"
        "hidden_size = 16\n"
        "eval_batches = 0\n"
        "batch_size = 4\n"
        "log_every = 2\n"
    )
    out_dir = tmp_path / "override"
    # Flags override the file: 2 batches, different out dir.
    code = run_cli(client, "train", "--config", str(config),
                   "--batches", "2", "--out", str(out_dir), "--poll", "0.05")
    assert code == 0
    assert (out_dir / "checkpoint.bin").exists()
    assert not (tmp_path / "from_file").exists()
    assert "batch 2/2" in capsys.readouterr().out


def test_cli_train_requires_core_options(client, tmp_path, capsys):
    code = run_cli(client, "train", "--model", "lstm")
    assert code == 2
    assert "requires" in capsys.readouterr().err


def test_cli_rejects_unknown_config_key(client, tmp_path, capsys):
    config = tmp_path / "bad.conf"
    config.write_text("mystery = 7\n")
    code = run_cli(client, "train", "--config", str(config))
    assert code == 2
    assert "mystery" in capsys.readouterr().err


def test_cli_train_failure_propagates(client, tmp_path, capsys):
    code = run_cli(client, "train", "--model", "lstm", "--classes", "2",
                   "--batches", "1", "--data", str(tmp_path / "missing.bin"),
                   "--out", str(tmp_path / "o"))
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_cli_jobs_unknown_id(client, capsys):
    assert run_cli(client, "jobs", "--job", "nope") == 1
