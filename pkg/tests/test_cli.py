"""CLI wiring: subcommands, config overrides, exit codes."""

import numpy as np

from rfevade.cli import main


def test_describe_runs(capsys):
    assert main(["describe"]) == 0
    out = capsys.readouterr().out
    assert "qpsk" in out and "hamming_7_4" in out
    assert "RRC filter" in out


def test_config_error_exit_code(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[experiment]\nscheme = shortwave\n")
    assert main(["describe", "--config", str(ini)]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_config_key_exit_code(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[experiment]\nwat = 1\n")
    assert main(["gen-data", "--config", str(ini), "--out", str(tmp_path / "d.npz")]) == 2


def test_gen_data_writes_npz(tmp_path):
    out = tmp_path / "data.npz"
    assert main(["gen-data", "--count-per-class", "3", "--out", str(out)]) == 0
    z = np.load(out)
    assert z["iq"].shape == (15, 2, 256)
    assert sorted(set(z["label"].tolist())) == [0, 1, 2, 3, 4]


def test_full_pipeline_tiny(tmp_path):
    clf = str(tmp_path / "clf.bin")
    assert main([
        "train-eavesdropper", "--count-per-class", "4",
        "--classifier-epochs", "1", "--out", clf,
    ]) == 0

    amn_path = str(tmp_path / "amn.bin")
    trace = str(tmp_path / "trace.csv")
    assert main([
        "train-amn", "--classifier", clf, "--amn-steps", "3", "--amn-batch", "4",
        "--out", amn_path, "--trace-out", trace,
    ]) == 0
    assert open(trace).readline().startswith("step,l_adv")

    sweep = str(tmp_path / "sweep.csv")
    assert main([
        "sweep-snr", "--classifier", clf, "--amn", amn_path,
        "--snr-grid", "5,10", "--frames-per-point", "10", "--out", sweep,
    ]) == 0
    lines = open(sweep).read().strip().split("\n")
    assert len(lines) == 3

    gsweep = str(tmp_path / "gamma.csv")
    assert main([
        "sweep-gamma", "--classifier", clf, "--model", f"0.1={amn_path}",
        "--frames-per-point", "10", "--out", gsweep,
    ]) == 0
    assert len(open(gsweep).read().strip().split("\n")) == 2

    psd_out = str(tmp_path / "psd.csv")
    assert main(["psd", "--model", f"aae={amn_path}", "--out", psd_out]) == 0
    assert open(psd_out).readline() == "freq,original_db,aae_db\n"

    tr = str(tmp_path / "time.csv")
    assert main(["trace", "--aae", amn_path, "--p-atn", amn_path, "--out", tr]) == 0
    assert open(tr).readline() == "sample,original,aae,p_atn\n"
