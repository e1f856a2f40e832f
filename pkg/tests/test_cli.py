import csv
import json

import numpy as np
import pytest

from modbias import cli


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    code = run_cli("gen-data", "--regime", "iid", "--seed", "3",
                   "--n-train", "300", "--n-test", "120",
                   "--out", str(root / "iid"))
    assert code == 0
    code = run_cli("gen-data", "--regime", "ood", "--seed", "3",
                   "--n-train", "300", "--n-test", "120",
                   "--out", str(root / "ood"))
    assert code == 0
    code = run_cli("estimate-margins", "--data", str(root / "iid"),
                   "--out", str(root / "margins.csv"),
                   "--save-counts", str(root / "counts.csv"))
    assert code == 0
    return root


def test_gen_data_layout(cli_data):
    for split in ("train", "test"):
        assert (cli_data / "iid" / split / "samples.bin").exists()
        assert (cli_data / "iid" / split / "manifest.json").exists()
    man = json.loads((cli_data / "iid" / "test" / "manifest.json").read_text())
    assert man["regime"] == "iid" and man["n"] == 120


def test_gen_data_idempotent(cli_data, capsys):
    before = (cli_data / "iid" / "train" / "samples.bin").read_bytes()
    man_before = (cli_data / "iid" / "train" / "manifest.json").read_bytes()
    assert run_cli("gen-data", "--regime", "iid", "--seed", "3",
                   "--n-train", "300", "--n-test", "120",
                   "--out", str(cli_data / "iid")) == 0
    assert (cli_data / "iid" / "train" / "samples.bin").read_bytes() == before
    assert (cli_data / "iid" / "train" / "manifest.json").read_bytes() == man_before


def test_estimate_margins_output(cli_data):
    with open(cli_data / "margins.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 100
    assert set(rows[0]) == {"bias_factor", "label", "margin"}
    vals = np.array([float(r["margin"]) for r in rows])
    assert vals.min() >= 0.0 and vals.max() <= 1.0


def test_estimate_margins_from_counts_csv(cli_data, tmp_path):
    out = tmp_path / "m2.csv"
    assert run_cli("estimate-margins", "--counts", str(cli_data / "counts.csv"),
                   "--out", str(out)) == 0
    with open(out, newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 100


def test_train_requires_margins_for_mmdb(cli_data, capsys):
    code = run_cli("train", "--loss", "mmdb", "--data", str(cli_data / "iid"))
    assert code == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1  # single line
    assert "--margins" in err


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("train", "--no-such-flag")
    assert exc.value.code == 2
    assert "usage error" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("explode")
    assert exc.value.code == 2


def test_help_lists_flags_with_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("train", "--help")
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--model", "--loss", "--data", "--margins", "--epochs",
                 "--batch-size", "--lr", "--optimizer", "--scale", "--seeds",
                 "--eval", "--name", "--runs", "--margin"):
        assert flag in text, flag
    assert text.count("default:") >= 12


@pytest.mark.parametrize("command", ["gen-data", "estimate-margins", "train",
                                     "sweep-margin", "sweep-scale", "diagnose",
                                     "loss-probe", "report"])
def test_every_subcommand_has_help(command, capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(command, "--help")
    assert exc.value.code == 0
    assert "default" in capsys.readouterr().out


def test_env_var_supplies_data_root(cli_data, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MODBIAS_DATA", str(cli_data / "iid"))
    out = tmp_path / "m3.csv"
    assert run_cli("estimate-margins", "--out", str(out)) == 0
    assert out.exists()


def test_runtime_error_exits_one(tmp_path, capsys):
    bad = tmp_path / "counts.csv"
    bad.write_text("0,0,5\n0,1,-3\n")
    code = run_cli("estimate-margins", "--counts", str(bad),
                   "--out", str(tmp_path / "m.csv"))
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and "NegativeCount" in err


def test_missing_file_exits_one(tmp_path, capsys):
    code = run_cli("estimate-margins", "--counts", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "m.csv"))
    assert code == 1


@pytest.fixture(scope="module")
def cli_run(cli_data, tmp_path_factory):
    runs = tmp_path_factory.mktemp("cliruns")
    code = run_cli("train", "--model", "mlp", "--loss", "softmax",
                   "--epochs", "2", "--seeds", "0",
                   "--data", str(cli_data / "iid"),
                   "--eval", f"ood={cli_data / 'ood'}",
                   "--name", "smoke", "--runs", str(runs))
    assert code == 0
    return runs / "smoke"


def test_train_writes_artifacts(cli_run):
    for name in ("config.json", "report.json", "curves.csv", "checkpoint.bin"):
        assert (cli_run / name).exists(), name
    rep = json.loads((cli_run / "report.json").read_text())
    assert "ood_acc" in rep["aggregate"]


def test_diagnose_outputs(cli_data, cli_run, tmp_path):
    out = tmp_path / "diag"
    code = run_cli("diagnose", "--run", str(cli_run),
                   "--data", str(cli_data / "ood"),
                   "--out", str(out), "--svg")
    assert code == 0
    for name in ("jsd.csv", "sharpness.csv", "embedding.csv", "embedding.svg"):
        assert (out / name).exists(), name
    with open(out / "jsd.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(0 <= float(r["jsd_bits"]) <= 1 for r in rows)


def test_loss_probe_softmax(tmp_path, capsys):
    logits = tmp_path / "z.csv"
    logits.write_text("2.0,0.5,0.1\n0.3,1.4,0.2\n")
    targets = tmp_path / "y.csv"
    targets.write_text("0\n1\n")
    probs_out = tmp_path / "p.csv"
    code = run_cli("loss-probe", "--kernel", "softmax",
                   "--logits", str(logits), "--targets", str(targets),
                   "--out", str(probs_out))
    assert code == 0
    out = capsys.readouterr().out
    assert "loss" in out
    with open(probs_out, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh)]
    assert len(rows) == 2
    assert abs(sum(rows[0]) - 1.0) < 1e-6


def test_loss_probe_mmdb_needs_margins(tmp_path, capsys):
    logits = tmp_path / "z.csv"
    logits.write_text("0.9,0.1\n")
    targets = tmp_path / "y.csv"
    targets.write_text("0\n")
    code = run_cli("loss-probe", "--kernel", "mmdb",
                   "--logits", str(logits), "--targets", str(targets))
    assert code == 2
    assert "--margins" in capsys.readouterr().err


def test_report_no_runs(tmp_path, capsys):
    code = run_cli("report", "--runs", str(tmp_path / "empty"))
    assert code == 1
    assert "NoRunsFound" in capsys.readouterr().err


def test_report_renders_runs(cli_run, tmp_path, capsys):
    out = tmp_path / "report.md"
    code = run_cli("report", "--runs", str(cli_run.parent), "--out", str(out))
    assert code == 0
    text = out.read_text()
    assert "| smoke |" in text and "mlp" in text


def test_report_missing_cells_render_dash(tmp_path, capsys):
    runs = tmp_path / "partial"
    runs.mkdir()
    (runs / "table6.csv").write_text(
        "cell,loss,margin,mean_acc,std_acc\n"
        "baseline,softmax,0,0.55,0.01\n"
        "nsl,nsl,0,0.60,0.02\n")
    out = tmp_path / "r.md"
    assert run_cli("report", "--runs", str(runs), "--out", str(out)) == 0
    text = out.read_text()
    assert "—" in text  # missing lmcl/adaptive cells render as an em dash
    assert "55.00" in text


def test_gen_data_rejects_bad_regime(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("gen-data", "--regime", "shifted", "--out", "/tmp/x")
    assert exc.value.code == 2
