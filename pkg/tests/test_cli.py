import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from xae import netpbm
from xae.cli import main, render_feature_grid
from xae.data import load_patches, planted_image
from xae.labels import PartitionSpec
from xae.model import init, load

TINY_TOY = {
    "partition": {
        "universe": ["0", "1", "2"],
        "source_groups": [["0", "1"], ["1", "2"]],
        "segments": [{"labels": ["0"], "width": 3}, {"labels": ["1"], "width": 2},
                     {"labels": ["2"], "width": 3}],
    },
    "hyperparams": {"profile": "mnist_toy"},
    "train": {"learning_rate": 0.01, "epochs": 2, "batch_size": 16, "seed": 0, "snapshot_every": 1},
    "model": {"act_enc": "sigmoid", "act_dec": "linear"},
    "data": {"format": "mnist012"},
    "data_options": {"max_per_label": 20},
    "classifier": {"hidden": [4], "train": {"learning_rate": 0.5, "epochs": 5, "batch_size": 8}},
    "crossval": {"folds": 3},
    "grad_check": {"instances": 3},
    "output_dir": "out",
}

TINY_SYNTH = {
    "partition": {
        "universe": ["background", "disk"],
        "source_groups": [["background"], ["disk"]],
        "segments": [{"labels": ["background"], "width": 2}, {"labels": ["disk"], "width": 2}],
    },
    "hyperparams": {"profile": "patch_generic"},
    "train": {"learning_rate": 0.01, "epochs": 2, "batch_size": 8, "seed": 0},
    "data": {"format": "synthetic", "n_per_class": 6},
    "classifier": {"hidden": [], "train": {"epochs": 3}},
    "detect": {"image": "scene.ppm", "stride": 1, "positive_class": "disk"},
    "output_dir": "out",
}


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def run(cfg, out, verb, *extra):
    return main([verb, "--config", str(cfg), "--out", str(out), *extra])


@pytest.fixture
def toy(tmp_path):
    return write_config(tmp_path, TINY_TOY)


@pytest.fixture
def synth(tmp_path):
    netpbm.write(tmp_path / "scene.ppm", netpbm.from_chw(planted_image(40, 44, (5, 9), seed=1)))
    return write_config(tmp_path, TINY_SYNTH)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_train_xae_outputs(toy, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(toy, out, "train-xae") == 0
    log = read_csv(out / "train_log.csv")
    assert log[0] == ["epoch", "recon", "decay", "sparsity", "gaussianity", "decorrelation", "total", "seconds"]
    assert [r[0] for r in log[1:]] == ["1", "2"] and all(r[-1] == "0" for r in log[1:])
    model = load(out / "model.json")
    assert model.spec.widths == [3, 2, 3] and model.geometry == (1, 28, 28)
    assert (out / "model_epoch0001.json").exists() and (out / "model_epoch0002.json").exists()
    assert (out / "model_epoch0002.json").read_bytes() == (out / "model.json").read_bytes()
    assert "trained 2 epochs" in capsys.readouterr().out


def test_log_time_flag(toy, tmp_path):
    assert run(toy, tmp_path / "o", "train-xae", "--log-time") == 0
    assert any(r[-1] != "0" for r in read_csv(tmp_path / "o" / "train_log.csv")[1:])


def test_seed_flag_changes_model(toy, tmp_path):
    run(toy, tmp_path / "a", "train-xae")
    main(["train-xae", "--config", str(toy), "--out", str(tmp_path / "b"), "--seed", "3"])
    assert (tmp_path / "a" / "model.json").read_bytes() != (tmp_path / "b" / "model.json").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(toy, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(toy, out, "train-xae", "--set", "trian.epochs=1") == 2
    assert "trian" in capsys.readouterr().err
    bad = write_config(tmp_path, {**TINY_TOY, "data": {"format": "idx", "images": "missing-images.idx",
                                                       "labels": "missing-labels.idx"}}, "bad.json")
    assert run(bad, out, "train-xae") == 3
    assert "missing-images.idx" in capsys.readouterr().err
    assert run(toy, out, "train-xae", "--set", "train.learning_rate=1e9", "--set", "train.epochs=3") == 4
    assert "float32 range" in capsys.readouterr().err
    assert run(toy, out, "train-xae", "--set", "train.learning_rate=1e9", "--set", "train.epochs=40",
               "--set", "train.snapshot_every=null") == 4
    assert "non-finite" in capsys.readouterr().err
    assert run(toy, out, "extract", "--model", str(tmp_path / "nope.json")) == 3
    assert main(["train-xae", "--config", str(tmp_path / "nope.json")]) == 2


def test_grad_check_pass_and_negative_control(toy, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(toy, out, "grad-check") == 0
    text = capsys.readouterr().out
    kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    for term in ("recon", "decay", "sparsity", "gaussianity", "decorrelation", "combined"):
        assert float(kv[f"max_rel_err.{term}"]) < 1e-4
    assert kv["status"] == "PASS" and kv["instances"] == "3"
    assert len(read_csv(out / "grad_check.csv")) == 4
    assert run(toy, out, "grad-check", "--inject-sign-error", "sparsity") == 5
    assert "status=FAIL" in capsys.readouterr().out


def test_extract_train_clf_eval(toy, tmp_path, capsys):
    out = tmp_path / "o"
    run(toy, out, "train-xae")
    assert run(toy, out, "extract") == 0
    rows = read_csv(out / "features.csv")
    assert rows[0] == ["label", "T0_0", "T0_1", "T0_2", "T1_0", "T1_1", "T2_0", "T2_1", "T2_2"]
    assert len(rows) == 61 and {r[0] for r in rows[1:]} == {"0", "1", "2"}
    assert run(toy, out, "train-clf") == 0
    assert "FCN hidden=[4]" in capsys.readouterr().out
    assert run(toy, out, "eval") == 0
    rep = read_csv(out / "eval_report.csv")
    assert [r[0] for r in rep[1:4]] == ["0", "1", "2"]
    assert sum(int(v) for r in rep[1:4] for v in r[8:11]) == 60
    assert (out / "roc_0.csv").exists()


def test_softmax_head_selected_by_empty_hidden(toy, tmp_path, capsys):
    out = tmp_path / "o"
    run(toy, out, "train-xae")
    assert run(toy, out, "train-clf", "--set", "classifier.hidden=[]") == 0
    assert "softmax head" in capsys.readouterr().out
    assert json.loads((out / "classifier.json").read_text())["widths"] == [8, 3]


def test_eval_kfold(toy, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(toy, out, "eval", "--kfold", "3") == 0
    cv = read_csv(out / "crossval.csv")
    assert [r[0] for r in cv[1:]] == ["0", "1", "2", "mean", "std"]
    assert "3-fold mean F-score" in capsys.readouterr().out


def test_eval_predictions_reproduce_published_rows(tmp_path, capsys):
    cm = [[2386, 38], [79, 697]]
    with open(tmp_path / "pred.csv", "w") as f:
        f.write("true,pred\n")
        for t in range(2):
            for p in range(2):
                f.write(f"{t},{p}\n" * cm[t][p])
    assert main(["eval", "--predictions", str(tmp_path / "pred.csv"), "--out", str(tmp_path / "o"),
                 "--positive", "1"]) == 0
    text = capsys.readouterr().out
    assert "class 0: row accuracy 98.43%" in text and "class 1: row accuracy 89.82%" in text
    rep = read_csv(tmp_path / "o" / "eval_report.csv")
    assert rep[1][8:10] == ["2386", "38"] and rep[2][8:10] == ["79", "697"]


def test_eval_predictions_with_scores(tmp_path):
    (tmp_path / "p.csv").write_text("true,pred,p:a,p:b\na,a,0.9,0.1\nb,b,0.2,0.8\nb,a,0.6,0.4\n")
    assert main(["eval", "--predictions", str(tmp_path / "p.csv"), "--out", str(tmp_path / "o")]) == 0
    rows = {r[0]: r for r in read_csv(tmp_path / "o" / "eval_report.csv")}
    assert float(rows["a"][7]) == 1.0
    (tmp_path / "q.csv").write_text("truth,guess\n")
    assert main(["eval", "--predictions", str(tmp_path / "q.csv"), "--out", str(tmp_path / "o")]) == 3


def test_feature_grid_layout(toy, tmp_path):
    out = tmp_path / "o"
    run(toy, out, "train-xae")
    assert run(toy, out, "feature-grid") == 0
    grid = netpbm.read(out / "features.pgm")
    # three bands of one 28-pixel tile row each, two separator rows, three tiles per row
    assert grid.shape == (3 * 28 + 2, 3 * 28)
    assert np.all(grid[28] == 0) and np.all(grid[57] == 0)
    # segment T1 has two units, so its third slot is the empty mid-gray tile
    assert np.all(grid[29:57, 56:84] == 128)
    assert grid[:28, :28].min() == 0 and grid[:28, :28].max() == 255


def test_feature_grid_degenerate_tile_and_channels():
    spec = PartitionSpec([0], [[0]], [([0], 2)])
    model = init(spec, 2 * 3 * 2, 0, geometry=(2, 3, 2))
    model.weights[:, 0] = 0.7
    grid = render_feature_grid(model, cols=2)
    assert grid.shape == (3, 2 * 4)
    assert np.all(grid[:, :4] == 128)
    tile = model.weights[:, 1].reshape(2, 3, 2)
    lo, hi = tile.min(), tile.max()
    want = np.rint((tile - lo) / (hi - lo) * 255).astype(np.uint8)
    assert np.array_equal(grid[:, 4:], np.concatenate([want[0], want[1]], axis=1))
    with pytest.raises(Exception):
        render_feature_grid(model, geometry=(1, 5, 5))


def test_feature_grid_needs_geometry(toy, tmp_path):
    out = tmp_path / "o"
    run(toy, out, "train-xae")
    assert run(toy, out, "feature-grid", "--geometry", "1,4,4") == 3


def test_detect_map(synth, tmp_path, capsys):
    out = tmp_path / "o"
    for verb in ("train-xae", "train-clf"):
        assert run(synth, out, verb) == 0
    assert run(synth, out, "detect-map") == 0
    m1 = netpbm.read(out / "probability_map.pgm")
    assert m1.shape == (40 - 27 + 1, 44 - 27 + 1)
    assert run(synth, out, "detect-map", "--stride", "2", "--output", "half.pgm") == 0
    assert netpbm.read(out / "half.pgm").shape == (7, 9)
    assert "peak" in capsys.readouterr().out
    assert run(synth, out, "detect-map", "--positive", "star") == 2
    assert run(synth, out, "detect-map", "--image", str(tmp_path / "none.ppm")) == 3


def test_import_patches_verb(tmp_path, rng):
    for k in range(3):
        netpbm.write(tmp_path / f"{k}.pgm", rng.integers(0, 256, size=(5, 5), dtype=np.uint8))
    (tmp_path / "m.csv").write_text("path,label\n0.pgm,tumour\n1.pgm,stroma\n2.pgm,tumour\n")
    assert main(["import-patches", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o")]) == 0
    ds = load_patches(tmp_path / "o" / "patches.xpd")
    assert ds.geometry == (1, 5, 5) and ds.label_names == {0: "stroma", 1: "tumour"}
    assert main(["import-patches", "--manifest", str(tmp_path / "x.csv"), "--out", str(tmp_path / "o")]) == 3


def test_bench_rows(toy, tmp_path):
    out = tmp_path / "o"
    assert run(toy, out, "bench-ae-vs-xae", "--set", "train.snapshot_every=null") == 0
    rows = read_csv(out / "bench_ae_vs_xae.csv")
    assert rows[0] == ["method", "mean_f_score", "std_f_score", "folds", "feature_width", "classifier_hidden",
                       "seed", "config_hash"]
    assert [r[0] for r in rows[1:]] == ["xae", "ae"]
    assert rows[1][3:] == rows[2][3:]
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_every_verb_is_byte_reproducible(toy, synth, tmp_path, rng):
    for k in range(2):
        netpbm.write(tmp_path / f"{k}.ppm", rng.integers(0, 256, size=(3, 3, 3), dtype=np.uint8))
    (tmp_path / "m.csv").write_text("0.ppm,a\n1.ppm,b\n")
    cwd = tmp_path / "cwd"
    cwd.mkdir()
    before = sorted(p.name for p in tmp_path.iterdir())
    outputs = []
    for rep in range(2):
        out_t, out_s = tmp_path / f"toy{rep}", tmp_path / f"syn{rep}"
        steps = [(toy, out_t, v) for v in ("train-xae", "grad-check", "extract", "train-clf", "eval",
                                           "feature-grid")]
        steps += [(toy, out_t, "eval", "--kfold", "3"), (toy, out_t, "bench-ae-vs-xae", "--folds", "2")]
        steps += [(synth, out_s, v) for v in ("train-xae", "train-clf", "detect-map")]
        steps += [(synth, out_s, "import-patches", "--manifest", str(tmp_path / "m.csv"))]
        for cfg, out, *args in steps:
            code = subprocess.run([sys.executable, "-m", "xae", args[0], "--config", str(cfg), "--out", str(out),
                                   *args[1:]], cwd=cwd, capture_output=True).returncode
            assert code == 0, args
        outputs.append({(d, p.name): p.read_bytes() for d, o in (("t", out_t), ("s", out_s))
                        for p in sorted(o.iterdir())})
    assert outputs[0].keys() == outputs[1].keys()
    names = {n for _, n in outputs[0]}
    assert {"model.json", "train_log.csv", "grad_check.csv", "features.csv", "classifier.json",
            "eval_report.csv", "crossval.csv", "features.pgm", "bench_ae_vs_xae.csv",
            "probability_map.pgm", "patches.xpd"} <= names
    for key in outputs[0]:
        assert outputs[0][key] == outputs[1][key], key
    # nothing written outside the two output directories
    assert list(cwd.iterdir()) == []
    after = sorted(p.name for p in tmp_path.iterdir())
    assert set(after) - set(before) == {"toy0", "toy1", "syn0", "syn1"}
