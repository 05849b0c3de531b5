import json

import pytest

from netident.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_example1(capsys):
    code, out, _ = run(capsys, "analyze", "example1", "--target", "2,1")
    assert code == 0
    assert "Y = {2, 4}   D = {1, 3, 4}" in out
    assert "Q = {4}   o = 2   A = {1, 3}" in out
    assert "B = {}" in out


def test_analyze_example2_report_files(capsys, tmp_path):
    code, out, _ = run(capsys, "analyze", "example2", "--target", "1,2", "--out-dir", str(tmp_path))
    assert code == 0
    text = (tmp_path / "report.txt").read_text()
    assert "B = {8}" in text
    assert "B = {6} fails 2b, 2c" in text
    assert "e4 reaches w6 and w4" in text and "w2 reaches blocking node w6: w2 -> w6" in text
    kv = (tmp_path / "summary.kv").read_text()
    assert "B = [8]" in kv and "conditions_passed = true" in kv
    assert (tmp_path / "conditions.tsv").exists() and (tmp_path / "confounders.tsv").exists()


def test_analyze_forced_blocking_json(capsys):
    code, out, _ = run(capsys, "--json", "analyze", "example2", "--target", "1,2", "--blocking", "6")
    assert code == 0
    doc = json.loads(out)
    assert doc["values"]["failed_conditions"] == ["2b", "2c"]
    # global flags are accepted after the command too
    code, out2, _ = run(capsys, "analyze", "example2", "--target", "1,2", "--blocking", "6", "--json")
    assert json.loads(out2) == doc


def test_check_spectra(capsys, tmp_path):
    code, out, _ = run(capsys, "check-spectra", "example2", "--target", "1,2", "--out-dir", str(tmp_path),
                       "--grid-size", "64")
    assert code == 0 and "BA" in out
    lines = (tmp_path / "spectrum_blocks.tsv").read_text().splitlines()
    assert lines[0] == "omega\tQA\toA\tBA" and len(lines) == 65
    assert (tmp_path / "spectrum_blocks.png").exists()
    assert "passed = true" in (tmp_path / "summary.kv").read_text()


def test_simulate_identify_round_trip(capsys, tmp_path):
    data = tmp_path / "d.txt"
    code, _, _ = run(capsys, "simulate", "example1", "-N", "3000", "--seed", "3", "-o", str(data))
    assert code == 0 and data.read_text().startswith("# netident-signals 1\n")
    out_dir = tmp_path / "id"
    code, out, err = run(capsys, "identify", "example1", str(data), "--target", "2,1", "--criterion", "mldet",
                         "--starts", "2", "--out-dir", str(out_dir), "--json")
    assert code == 0, err
    doc = json.loads(out)
    assert doc["values"]["relative_error_vs_config"] < 0.1
    assert doc["values"]["excitation_min_eigenvalue"] > 0
    for name in ("module_coefficients.tsv", "module_response.tsv", "criterion_history.tsv", "module_response.png"):
        assert (out_dir / name).exists()
    code, out, err = run(capsys, "identify", "example1", str(data), "--target", "2,1", "--setup", "miso",
                         "--criterion", "wls", "--orders", "nb=1,nf=1,nk=1,nc=1,nd=1", "--starts", "2")
    assert code == 0, err


@pytest.mark.parametrize("argv,msg", [
    (["analyze", "missing.toml", "--target", "2,1"], "cannot read"),
    (["analyze", "example1", "--target", "1,2"], "not present"),
    (["identify", "example1", "nofile.txt", "--target", "2,1"], "cannot read"),
    (["montecarlo"], "needs a config"),
])
def test_errors_exit_nonzero(capsys, argv, msg):
    code, _, err = run(capsys, *argv)
    assert code == 1 and msg in err


def test_empty_config(capsys, tmp_path):
    p = tmp_path / "empty.toml"
    p.write_text("")
    code, _, err = run(capsys, "analyze", str(p), "--target", "2,1")
    assert code == 1 and "empty.toml:1" in err


def test_no_valid_blocking_set(capsys, tmp_path):
    from conftest import noblock_network
    from netident.config import dump_config

    p = tmp_path / "nb.toml"
    p.write_text(dump_config(noblock_network()))
    code, _, err = run(capsys, "analyze", str(p), "--target", "2,1")
    assert code == 1 and "no blocking set" in err


def test_bad_target_syntax(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "example1", "--target", "2"])
    assert exc.value.code == 2


def test_montecarlo_manifest_rerun(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    code, _, err = run(capsys, "montecarlo", "example1", "--target", "2,1", "-R", "2", "-N", "300",
                       "--starts", "1", "--out-dir", str(a))
    assert code == 0, err
    code, _, err = run(capsys, "montecarlo", "--manifest", str(a / "manifest.toml"), "--out-dir", str(b))
    assert code == 0, err
    for name in ("summary.kv", "errors_by_n.tsv", "realizations.tsv", "bias_curves.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
