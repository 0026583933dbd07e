import csv
import subprocess
import sys

import numpy as np
import pytest
import yaml

from shmgan.cli import main

TINY = {
    "seed": 3, "seg_len": 64,
    "gan": {"channel_widths": [8, 8, 4, 4, 1], "minibatch": 32, "critic_iters": 2, "eval_interval": 1,
            "eval_samples": 16},
    "classifier": {"channel_widths": [8, 8, 4, 4, 1], "epochs": 3},
    "cases": [{"name": "T2", "gan_epochs": 2}],
    "eval": {"n_generate": 32},
}


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def _args(cfg, out, *extra):
    return ["--config", str(cfg), "--out", str(out), *extra]


def test_missing_upstream_is_exit_6(tiny, tmp_path, capsys):
    assert main(["train-gan", *_args(tiny, tmp_path / "run")]) == 6
    assert "missing upstream artifact" in capsys.readouterr().err


def test_usage_and_config_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["ingest", "--config", str(tmp_path / "none.yaml")]) == 3
    assert "does not exist" in capsys.readouterr().err
    assert main(["ingest", "--seg-len", "100", "--out", str(tmp_path)]) == 3
    assert main(["ingest", "--undamaged", "x.csv", "--out", str(tmp_path)]) == 3


def test_missing_signal_file_is_nonzero(tmp_path, capsys):
    good = tmp_path / "u.csv"
    good.write_text("\n".join("1" for _ in range(100)))
    code = main(["ingest", "--undamaged", str(good), "--damaged", str(tmp_path / "gone.csv"),
                 "--out", str(tmp_path / "run")])
    assert code != 0
    assert capsys.readouterr().err.strip()


def test_ingest_files(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for name in ("u", "d"):
        p = tmp_path / f"{name}.csv"
        p.write_text("\n".join(repr(float(v)) for v in rng.normal(size=6400)) + "\n")
        paths.append(p)
    out = tmp_path / "run"
    assert main(["ingest", "--undamaged", str(paths[0]), "--damaged", str(paths[1]),
                 "--seg-len", "64", "--out", str(out)]) == 0
    assert '"damaged": 100' in (out / "data" / "ingest.json").read_text()
    assert len(list((out / "data" / "damaged").glob("*.f64"))) == 100


def test_stagewise_commands(tiny, tmp_path, capsys):
    out = tmp_path / "run"
    for cmd in (["ingest"], ["train-gan"], ["generate", "--n", "20"], ["eval"],
                ["train-dcnn", "--scenario", "1"], ["test-dcnn", "--scenario", "1"]):
        assert main([*cmd, *_args(tiny, out)]) == 0, cmd
    assert len(list((out / "T2" / "fake").glob("*.f64"))) == 20
    assert capsys.readouterr().out.startswith("CA ")
    assert main(["test-dcnn", "--scenario", "2", *_args(tiny, out)]) == 6


def test_env_var_sets_output(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("SHMGAN_OUT_DIR", str(tmp_path / "env"))
    assert main(["ingest", "--config", str(tiny)]) == 0
    assert (tmp_path / "env" / "data" / "ingest.json").exists()


def test_pipeline_resume_and_plots(tiny, tmp_path, capsys, caplog):
    out = tmp_path / "run"
    assert main(["pipeline", *_args(tiny, out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split("\t")[:2] for ln in lines] == [["T2", "scenario 1"], ["T2", "scenario 2"]]
    with open(out / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    svgs = sorted(p.name for p in (out / "plots").glob("*.svg"))
    assert "T2_gan_loss.svg" in svgs and "summary_metrics.svg" in svgs and len(svgs) == 12
    assert all(p.with_suffix(".csv").exists() for p in (out / "plots").glob("*.svg"))
    caplog.clear()
    with caplog.at_level("INFO", logger="shmgan"):
        assert main(["pipeline", *_args(tiny, out)]) == 0
    skipped = [r.message for r in caplog.records if r.message.startswith("skip ")]
    assert len(skipped) == 10
    # touching an upstream output reruns it and everything after it
    (out / "T2" / "gan" / "history.csv").write_text("corrupt")
    caplog.clear()
    with caplog.at_level("INFO", logger="shmgan"):
        assert main(["pipeline", *_args(tiny, out)]) == 0
    ran = [r.message.split()[1] for r in caplog.records if r.message.startswith("run ")]
    assert ran[0] == "T2/train-gan" and ran[-1] == "plots" and "ingest" not in ran


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "shmgan.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("shmgan ")
