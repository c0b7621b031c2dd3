import csv
import json

import pytest
from PIL import Image

from gridcollage.cli import main
from gridcollage.dataset import parse_collage_info, parse_predictions


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small synthetic 2x2 world, labelled by the simulator and with a trained predictor."""
    root = tmp_path_factory.mktemp("ws")
    assert main(["gen-data", "--grid", "2", "--groups", "30", "--shuffles", "5", "--feat-dim", "8",
                 "--seed", "3", "--out", str(root / "data")]) == 0
    meta = root / "data" / "metainfo"
    assert main(["eval", "--info", str(meta / "collage_info_2x2.json"), "--difficulty", str(meta / "difficulty.json"),
                 "--beta", "0.3", "--delta-c", "0.1", "--seed", "1", "--out", str(root / "eval")]) == 0
    assert main(["train", "--records", str(root / "eval" / "predictions.json"),
                 "--features", str(meta / "features.cpfs"), "--hidden", "8", "--mlp-dims", "16", "8",
                 "--batch-size", "32", "--epochs", "15", "--out", str(root / "model")]) == 0
    return root


def test_metrics_reference_row(capsys):
    code, out, _ = run(capsys, "metrics", "--acc", 45.7, "--cost", 12.83, "--ref-acc", 62.0, "--ref-cost", 51.30)
    assert code == 0
    lines = dict(line.split() for line in out.strip().splitlines())
    assert lines["CER"] == "5.38"
    assert abs(float(lines["PCE"]) - 10.60) <= 0.05


def test_metrics_undefined_pce(capsys, tmp_path):
    code, out, _ = run(capsys, "metrics", "--acc", 62, "--cost", 51.3, "--ref-acc", 62, "--ref-cost", 51.3,
                       "--out", tmp_path / "m.csv")
    assert code == 0 and "undefined" in out
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "dataset,n,cost_per_1k,accuracy,cer,pce"


def test_gen_data_outputs(workspace):
    meta = workspace / "data" / "metainfo"
    specs = parse_collage_info(meta / "collage_info_2x2.json")
    assert len(specs) == 150
    man = json.loads((workspace / "data" / "manifest.json").read_text())
    assert man["command"] == "gen-data" and "metainfo/collage_info_2x2.json" in man["outputs"]


def test_eval_and_stats(workspace, capsys, tmp_path):
    recs = parse_predictions(workspace / "eval" / "predictions.json")
    assert len(recs) == 150
    code, out, _ = run(capsys, "stats", "--records", workspace / "eval" / "predictions.json", "--out", tmp_path / "s.csv")
    assert code == 0 and out.startswith("150 collages")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert [int(r["cell"]) for r in rows] == [0, 1, 2, 3]


def test_train_outputs(workspace):
    hist = (workspace / "model" / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_mse,val_mse" and len(hist) > 1
    assert (workspace / "model" / "params.cpgp").stat().st_size > 0


def test_brute_and_lcp_agree_at_2x2(workspace, capsys):
    ids = [r.split(",")[0] for r in (workspace / "data" / "metainfo" / "pool.csv").read_text().splitlines()[1:5]]
    common = ["--grid", 2, "--ids", ",".join(ids), "--features", workspace / "data" / "metainfo" / "features.cpfs",
              "--params", workspace / "model" / "params.cpgp", "--budget", 24]
    code_b, out_b, _ = run(capsys, "optimize", "--mode", "brute", *common)
    code_l, out_l, _ = run(capsys, "optimize", "--mode", "lcp", *common)
    assert code_b == code_l == 0
    brute, lcp = json.loads(out_b), json.loads(out_l)
    assert brute["arrangement"] == lcp["arrangement"] and brute["fitness"] == lcp["fitness"]
    assert brute["evaluations"] == lcp["evaluations"] == 24


def test_optimize_outputs_reproducible(workspace, capsys, tmp_path):
    ids = [r.split(",")[0] for r in (workspace / "data" / "metainfo" / "pool.csv").read_text().splitlines()[1:5]]
    args = ["optimize", "--ids", ",".join(ids), "--features", workspace / "data" / "metainfo" / "features.cpfs",
            "--params", workspace / "model" / "params.cpgp", "--seed", 4, "--no-timing"]
    run(capsys, *args, "--out", tmp_path / "a")
    run(capsys, *args, "--out", tmp_path / "b")
    for name in ("best.json", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["seeds"] == mb["seeds"] == {"seed": 4}


def test_optimize_grid_mismatch_is_usage_error(workspace, capsys):
    code, _, err = run(capsys, "optimize", "--grid", 3, "--ids", "a,b,c,d",
                       "--features", workspace / "data" / "metainfo" / "features.cpfs",
                       "--params", workspace / "model" / "params.cpgp")
    assert code == 2 and "needs 9 ids" in err


def test_simulate_deterministic(capsys, tmp_path):
    code1, out1, _ = run(capsys, "simulate", "--grid", 3, "--groups", 50, "--seed", 7, "--out", tmp_path / "a")
    code2, out2, _ = run(capsys, "simulate", "--grid", 3, "--groups", 50, "--seed", 7, "--out", tmp_path / "b")
    assert code1 == code2 == 0 and out1 == out2
    summary = json.loads(out1)
    assert summary["collages"] == 250 and len(summary["position_accuracy"]) == 9
    for name in ("collage_info.json", "predictions.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_collage_command(capsys, tmp_path):
    images = tmp_path / "images"
    images.mkdir()
    colors = [(200, 0, 0), (0, 200, 0), (0, 0, 200), (200, 200, 0)] * 2
    with open(tmp_path / "pool.csv", "w") as fh:
        fh.write("image,synset_id,label\n")
        for i, c in enumerate(colors):
            Image.new("RGB", (24, 24), c).save(images / f"pic{i}.png")
            fh.write(f"pic{i},{i % 4},class {i % 4}\n")
    assert run(capsys, "gen-data", "--grid", 2, "--pool", tmp_path / "pool.csv", "--shuffles", 2,
               "--out", tmp_path / "d")[0] == 0
    code, out, _ = run(capsys, "collage", "--info", tmp_path / "d" / "metainfo" / "collage_info_2x2.json",
                       "--images", images, "--cell-px", 32, "--jobs", 2, "--out", tmp_path / "c")
    assert code == 0
    made = sorted((tmp_path / "c" / "2x2").glob("*.jpeg"))
    assert len(made) == 4 and Image.open(made[0]).size == (64, 64)


def test_config_supplies_defaults_and_flags_win(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[metrics]\nacc = 45.7\ncost = 12.83\nref-acc = 62.0\nref-cost = 51.30\n')
    code, out, _ = run(capsys, "metrics", "--config", cfg)
    assert code == 0 and "CER 5.38" in out
    code, out, _ = run(capsys, "metrics", "--config", cfg, "--acc", 39.4)
    assert "CER 4.99" in out and "PCE 5.49" in out


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[metrics]\naccuracy = 1\n")
    with pytest.raises(SystemExit) as info:
        main(["metrics", "--config", str(cfg), "--acc", "1", "--cost", "1"])
    assert info.value.code == 2


def test_unknown_subcommand_and_flag(capsys):
    for argv in (["frobnicate"], ["metrics", "--acc", "1", "--cost", "1", "--bogus"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2


def test_downstream_error_is_structured(capsys, tmp_path):
    code, _, err = run(capsys, "stats", "--records", tmp_path / "missing.json")
    assert code == 1
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["command"] == "stats" and doc["error"] == "FileNotFoundError"


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "gridcollage", "metrics", "--acc", "62", "--cost", "51.3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "CER 4.30"
