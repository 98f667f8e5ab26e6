import json
import subprocess
import sys

import pytest

from poms.cli import main, read_coverage_csv, read_finals_csv, read_mixing_csv, stats_pairs
from poms.errors import ParseError

BUDGET = {"bootstrap": 40, "loops": 2, "iters": 2, "batch": 10}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def run_config(tmp_path):
    return write(tmp_path / "run.json", {
        "env": "point-kicker", "policy": {"hidden": [4]},
        "variant": {"kind": "poms", "sigma": 0.01, "hidden_dim": 8, "latent_dim": 2,
                    "train": {"max_epochs": 5}},
        "budget": BUDGET, "seeds": [0, 1], "output_dir": str(tmp_path / "out"), "checkpoint_every": 1})


def test_run_writes_artifacts(run_config, tmp_path):
    assert main(["run", str(run_config)]) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete" and len(manifest["config_hash"]) == 64
    curve = read_coverage_csv(out / "coverage_poms_0.csv")
    assert curve.evals[-1] == 40 + 2 * 2 * 10
    assert [l for l, _ in read_mixing_csv(out / "mixing_poms_1.csv")] == [1, 2]
    assert len(read_finals_csv(out / "finals_poms.csv")) == 2
    assert (out / "archive_poms_0_loop1.json").exists()
    assert (out / "archive_poms_0.json").exists()
    assert (out / "coverage_poms_0.csv").read_text().splitlines()[0] == "evals,coverage"


def test_run_rerun_byte_identical(run_config, tmp_path):
    main(["run", str(run_config)])
    first = (tmp_path / "out" / "coverage_poms_1.csv").read_bytes()
    d = json.loads(run_config.read_text())
    d["workers"] = 3
    write(run_config, d)
    main(["run", str(run_config)])
    assert (tmp_path / "out" / "coverage_poms_1.csv").read_bytes() == first


def test_run_invalid_config_exit_2(tmp_path, capsys):
    assert main(["run", str(write(tmp_path / "c.json", {"seeds": [0]}))]) == 2
    assert "env" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_runtime_failure_exit_1(tmp_path):
    cfg = write(tmp_path / "c.json", {
        "env": {"name": "point-kicker", "overrides": {"episode_length": 5}},
        "variant": {"kind": "poms", "sigma": 1e300, "latent_dim": 2, "hidden_dim": 2,
                    "train": {"max_epochs": 2, "learning_rate": 1e300}},
        "policy": {"hidden": [2]}, "budget": BUDGET, "seeds": [0], "output_dir": str(tmp_path / "o")})
    rc = main(["run", str(cfg)])
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert rc == 1 and manifest["status"] == "failed"


def test_compare_outputs(tmp_path):
    cfg = write(tmp_path / "camp.json", {
        "env": "probe-bd", "policy": {"hidden": [3]},
        "variants": [{"kind": "poms", "sigma": 0.05, "hidden_dim": 4, "latent_dim": 2, "train": {"max_epochs": 3}},
                     {"kind": "mape-iso", "sigma": 0.05},
                     {"kind": "poms-pca", "sigma": 0.05, "latent_dim": 2},
                     {"kind": "ps-uniform"}],
        "budget": BUDGET, "seeds": [0, 1, 2], "output_dir": str(tmp_path / "c"), "jobs": 1})
    assert main(["compare", str(cfg)]) == 0
    out = tmp_path / "c"
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "variant,checkpoint,median,q25,q75"
    assert len(summary) == 1 + 4 * 5
    stats = (out / "stats.csv").read_text().splitlines()
    assert stats[0] == "variant_a,variant_b,U,p,method"
    assert [r.split(",")[:2] for r in stats[1:4]] == [["poms", "mape-iso"], ["poms-pca", "mape-iso"],
                                                      ["ps-uniform", "mape-iso"]]
    assert stats[4].startswith("max-p[poms|poms-pca],mape-iso")


def test_stats_pairs_without_baseline():
    assert stats_pairs(["a", "b", "c"]) == [("a", "b"), ("a", "c"), ("b", "c")]


def test_stats_command(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("seed,final_coverage\n" + "".join(f"{i},{0.5 + i / 10}\n" for i in range(5)))
    b.write_text("coverage\n0.1\n0.2\n0.3\n0.4\n0.45\n")
    assert main(["stats", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "U=25.0" in out and "method=exact" in out
    assert main(["stats", str(a), str(b), "--alternative", "two-sided"]) == 0
    assert "p=0.007936507936507936" in capsys.readouterr().out


def test_stats_parse_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    assert main(["stats", str(bad), str(bad)]) == 2
    with pytest.raises(ParseError):
        read_finals_csv(tmp_path / "missing.csv")
    empty = tmp_path / "e.csv"
    empty.write_text("seed,final_coverage\n")
    with pytest.raises(ParseError):
        read_finals_csv(empty)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "poms", "stats", str(tmp_path / "nope.csv"), "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
