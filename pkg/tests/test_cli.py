import csv
import json

import pytest

from hardylab.cli import main

from conftest import CONFIGS, SUBCOMMANDS, cli_digests


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_same_seed_same_bytes(tmp_path, command):
    code_a, a = cli_digests(command, tmp_path / "a", "--seed", "7", "--threads", "1")
    code_b, b = cli_digests(command, tmp_path / "b", "--seed", "7", "--threads", "3")
    assert code_a == code_b == 0
    assert a == b and "manifest.json" in a and "FAILED" not in a


def test_manifest_contents(tmp_path):
    cli_digests("improve", tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and man["command"] == "improve"
    assert set(man["versions"]) >= {"hardylab", "numpy", "scipy", "mpmath"}
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["k"] == 5185 and abs(cert["log10_S"] - 3122.4) <= 0.1


def test_hardy_scan_rows(tmp_path):
    assert cli_digests("hardy-scan", tmp_path)[0] == 0
    with open(tmp_path / "hardy_scan.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["constant"]) for r in rows] == [1.0] * len(rows)


def test_doubling_1d(tmp_path):
    cli_digests("doubling", tmp_path)
    rep = json.loads((tmp_path / "manifest.json").read_text())["result"]
    assert rep["d_hat_large_radii"] == pytest.approx(2.0, rel=0.1)


def test_missing_config(tmp_path):
    assert main(["curve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


def test_bad_json(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert main(["curve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_seed(tmp_path):
    cfg = CONFIGS / "improve.json"
    assert main(["improve", "--config", str(cfg), "--out", str(tmp_path), "--seed", "-1"]) == 2


def test_config_error_writes_marker(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"domain": str(CONFIGS / "square32.json"), "p": "two"}))
    out = tmp_path / "o"
    assert main(["maxfn", "--config", str(cfg), "--out", str(out)]) == 2
    assert (out / "FAILED").read_text().startswith("maxfn")
    # a later good run clears the stale marker
    assert main(["improve", "--config", str(CONFIGS / "improve.json"), "--out", str(out)]) == 0
    assert not (out / "FAILED").exists()


def test_module_error_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    hyp = json.loads((CONFIGS / "improve.json").read_text())
    hyp["hypotheses"]["p0"] = 5
    cfg.write_text(json.dumps(hyp))
    code = main(["improve", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code in (1, 2) and (tmp_path / "o" / "FAILED").exists()
