import json

import pytest

from bosepair.harness import ConfigError, Emitter, load_config, main


def test_unknown_keys_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": {"M": 4, "spacing": 2}}))
    with pytest.raises(ConfigError, match="grid.spacing"):
        load_config(str(cfg))
    assert main(["verify-lemma", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_overrides_parse_json():
    cfg = load_config(None, ["run.N_list=[2,4]", "out.tag=abc", "potential.params={\"value\": 2}"])
    assert cfg["run"]["N_list"] == [2, 4]
    assert cfg["out"]["tag"] == "abc"
    assert cfg["potential"]["params"] == {"value": 2}


@pytest.mark.parametrize(
    "override",
    ['potential.kind="asymmetric-table"', "tol.krylov=0", "run.dt=0.3", "grid.M=1", "phi0.kind=\"bad\""],
)
def test_config_errors_exit_2(tmp_path, override):
    assert main(["sweep", "--set", override, "--out", str(tmp_path)]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_verify_lemma_writes_report(tmp_path):
    assert main(["verify-lemma", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "lemma_report.json").read_text())
    assert len(rep["trials"]) == 5
    assert all(lvl["rel_deviation"] < 1e-9 for t in rep["trials"] for lvl in t["levels"])
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["pass"] and summary["basis_order"] == "graded-revlex-v1"
    assert summary["tolerances"]["lemma_rel"] == 1e-9


def test_failed_invariant_exits_1(tmp_path):
    assert main(["solve-hartree", "--set", "tol.hartree_energy=1e-30", "--out", str(tmp_path)]) == 1
    assert "FAIL" in (tmp_path / "summary.txt").read_text()


def test_tags_do_not_clobber(tmp_path):
    base = ["norms", "--set", "run.T=0.01", "--set", "run.norm_n_max=6", "--out", str(tmp_path)]
    assert main(base + ["--set", "out.tag=a"]) == 0
    assert main(base + ["--set", "out.tag=b"]) == 0
    assert (tmp_path / "a_norms.csv").exists() and (tmp_path / "b_norms.csv").exists()
    assert (tmp_path / "a_summary.json").exists()


def test_empty_csv_has_header(tmp_path):
    p = Emitter(tmp_path, "").csv("x.csv", ["N", "t"], [])
    assert p.read_text() == "N,t\n"


def test_rerun_is_byte_identical(tmp_path):
    args = ["solve-pairex", "--set", "run.T=0.02", "--set", "grid.M=3", "--out", str(tmp_path)]
    assert main(args) == 0
    first = {name: (tmp_path / name).read_bytes() for name in ("pairex.csv", "summary.json")}
    assert main(args) == 0
    for name, raw in first.items():
        assert (tmp_path / name).read_bytes() == raw
