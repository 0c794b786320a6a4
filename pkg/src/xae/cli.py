"""Command-line front end.

Every verb reads one JSON experiment config (``--config``); ``--seed``,
``--out`` and ``--set KEY=VALUE`` override single keys. Exit codes:
0 ok, 2 config error, 3 data error, 4 numeric failure, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import classifier as clf_mod
from . import gradcheck, netpbm
from .config import ConfigError, ExperimentConfig
from .cost import CostError
from .data import DataError, GeometryError, import_patches, map_to_pgm, probability_map, save_patches
from .labels import PartitionError
from .metrics import confusion_matrix, evaluate_scores, report_from_confusion
from .model import ModelError, XaeModel, load, save
from .pipeline import PipelineConfig, crossval, fit_features
from .trainer import TrainingDiverged, TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5


# -- shared plumbing ------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key, _parse_value(value))
    if args.seed is not None:
        cfg.set("train.seed", args.seed)
    return cfg


def _group_seed(cfg: ExperimentConfig) -> int:
    return int(cfg.section("data_options").get("group_seed", cfg.seed))


def _pipeline(cfg: ExperimentConfig, ds, mode: str = "xae") -> PipelineConfig:
    spec = cfg.partition(ds.name_to_id())
    return PipelineConfig(spec, cfg.hyperparams(), cfg.train_config(), cfg.classifier_hidden(),
                          cfg.classifier_train_config(), mode=mode, group_seed=_group_seed(cfg),
                          geometry=ds.geometry, **cfg.model_options())


def _model_path(args, out: Path, name="model.json") -> Path:
    return Path(args.model) if getattr(args, "model", None) else out / name


def _inside(out: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out / p


def _positive(value, names: dict[int, str]) -> int | None:
    """Resolve a label name (or id) to an id using a label table."""
    if value is None:
        return None
    by_name = {v: k for k, v in names.items()}
    if str(value) in by_name:
        return by_name[str(value)]
    if isinstance(value, int) and value in names:
        return value
    raise ConfigError(f"unknown positive class {value!r}")


def _write_report(rep, out: Path, name="eval_report.csv") -> None:
    rep.write_csv(out / name)
    if rep.roc:
        rep.write_roc_csv(out)
    for c, acc in zip(rep.classes, rep.row_accuracy):
        print(f"class {rep.name(c)}: row accuracy {100 * acc:.2f}%  F {100 * rep.f_score[rep.classes.index(c)]:.2f}%")
    print(f"F-score {100 * rep.headline_f:.2f}%  accuracy {100 * rep.accuracy:.2f}%")


# -- verbs --------------------------------------------------------------------------

def cmd_train_xae(args) -> int:
    cfg = _config(args)
    ds = cfg.dataset()
    pcfg = _pipeline(cfg, ds)
    out = cfg.output_dir(args.out)

    def snapshot(epoch, model):
        save(model, out / f"model_epoch{epoch:04d}.json")

    model, report = fit_features(pcfg, ds, snapshot)
    save(model, out / "model.json")
    report.write_csv(out / "train_log.csv", with_time=args.log_time)
    last = report.history[-1]
    print(f"trained {len(report.history)} epochs ({report.stop_reason}); final cost {last.total:.6f}")
    print(f"wrote {out / 'model.json'} and {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _config(args)
    sec = cfg.section("grad_check")
    tol = float(sec.get("tolerance", 1e-4))
    shape = {k: int(sec[k]) for k in ("max_input", "max_width", "max_batch") if k in sec}
    rows = gradcheck.run(int(sec.get("instances", 20)), int(sec.get("seed", cfg.seed)),
                         float(sec.get("step", 1e-5)), args.inject_sign_error, **shape)
    out = cfg.output_dir(args.out)
    with open(out / "grad_check.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["instance", *gradcheck.CHECKS])
        for k, row in enumerate(rows):
            w.writerow([k] + [repr(row[c]) for c in gradcheck.CHECKS])
    worst = {c: max(r[c] for r in rows) for c in gradcheck.CHECKS}
    ok = all(v < tol for v in worst.values())
    for c in gradcheck.CHECKS:
        print(f"max_rel_err.{c}={worst[c]:.6e}")
    print(f"instances={len(rows)}")
    print(f"tolerance={tol:g}")
    print(f"status={'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_extract(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    model = load(_model_path(args, out))
    ds = cfg.dataset()
    feats = clf_mod.extract_features(model, ds.vectors)
    header = ["label"] + [f"T{j}_{k}" for j, n in enumerate(model.spec.widths) for k in range(n)]
    with open(out / "features.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for lab, row in zip(ds.labels, feats):
            w.writerow([ds.label_names[int(lab)]] + [repr(float(v)) for v in row])
    print(f"wrote {len(ds)} feature rows of width {feats.shape[1]} to {out / 'features.csv'}")
    return EXIT_OK


def cmd_train_clf(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    model = load(_model_path(args, out))
    ds = cfg.dataset()
    feats = clf_mod.extract_features(model, ds.vectors)
    hidden = cfg.classifier_hidden()
    clf = clf_mod.train_classifier(feats, ds.labels, hidden, cfg.classifier_train_config(),
                                   label_names=ds.label_names)
    clf_mod.save_classifier(clf, out / "classifier.json")
    kind = "softmax" if clf.is_softmax else f"FCN hidden={list(hidden)}"
    print(f"trained {kind} head on {len(ds)} records; wrote {out / 'classifier.json'}")
    return EXIT_OK


def _numeric_sort(names):
    try:
        return sorted(names, key=float)
    except ValueError:
        return sorted(names)


def _eval_predictions(path: Path, positive):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows or "true" not in rows[0] or "pred" not in rows[0]:
        raise DataError(f"{path}: expected columns 'true' and 'pred'")
    score_cols = [c for c in rows[0] if c.startswith("p:")]
    names = _numeric_sort({r["true"] for r in rows} | {r["pred"] for r in rows}
                          | {c[2:] for c in score_cols})
    ids = {n: i for i, n in enumerate(names)}
    label_names = {i: n for n, i in ids.items()}
    y_true = np.array([ids[r["true"]] for r in rows])
    pos = _positive(positive, label_names)
    classes = list(range(len(names)))
    if score_cols:
        if {c[2:] for c in score_cols} != set(names):
            raise DataError(f"{path}: score columns must cover every class")
        proba = np.array([[float(r[f"p:{n}"]) for n in names] for r in rows])
        return evaluate_scores(y_true, proba, classes, pos, label_names)
    y_pred = [ids[r["pred"]] for r in rows]
    return report_from_confusion(confusion_matrix(y_true, y_pred, classes), classes, pos, label_names)


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    cv = cfg.section("crossval")
    positive = args.positive if args.positive is not None else cv.get("positive_class")
    if args.predictions:
        rep = _eval_predictions(Path(args.predictions), positive)
        _write_report(rep, out)
        return EXIT_OK
    ds = cfg.dataset()
    pos = _positive(positive, ds.label_names)
    if args.kfold:
        res = crossval(_pipeline(cfg, ds), ds, args.kfold, int(cv.get("seed", cfg.seed)), pos,
                       bool(cv.get("stratified", True)))
        res.write_csv(out / "crossval.csv")
        _write_report(res.pooled, out)
        print(f"{args.kfold}-fold mean F-score {100 * res.mean['f_score']:.2f}% "
              f"± {100 * res.std['f_score']:.2f}%")
        return EXIT_OK
    model = load(_model_path(args, out))
    clf = clf_mod.load_classifier(Path(args.classifier) if args.classifier else out / "classifier.json")
    rep = clf_mod.evaluate(clf, clf_mod.extract_features(model, ds.vectors), ds.labels, pos)
    _write_report(rep, out)
    return EXIT_OK


def render_feature_grid(model: XaeModel, geometry=None, cols: int | None = None) -> np.ndarray:
    """Tile every weight column; one band per segment, 1-pixel black rows between bands.

    Each tile is min-max scaled to 0..255 on its own (channels side by side);
    a constant column gives a uniform 128 tile, as do unused grid slots.
    """
    geometry = tuple(geometry or model.geometry or ())
    if len(geometry) != 3 or int(np.prod(geometry)) != model.input_dim:
        raise GeometryError(f"geometry {geometry or None} does not match input length {model.input_dim}")
    c, h, w = geometry
    cols = cols or min(16, max(model.spec.widths))
    tile_w = c * w
    parts = []
    for j in range(len(model.spec.segments)):
        block = model.block(j)
        rows = -(-block.shape[1] // cols)
        band = np.full((rows * h, cols * tile_w), 128, dtype=np.uint8)
        for k in range(block.shape[1]):
            col = block[:, k]
            lo, hi = float(col.min()), float(col.max())
            if hi > lo:
                t = np.rint((col - lo) / (hi - lo) * 255.0).astype(np.uint8).reshape(c, h, w)
                tile = np.concatenate(list(t), axis=1)
            else:
                tile = np.full((h, tile_w), 128, dtype=np.uint8)
            r, q = divmod(k, cols)
            band[r * h:(r + 1) * h, q * tile_w:(q + 1) * tile_w] = tile
        if parts:
            parts.append(np.zeros((1, cols * tile_w), dtype=np.uint8))
        parts.append(band)
    return np.concatenate(parts, axis=0)


def cmd_feature_grid(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    model = load(_model_path(args, out))
    geometry = tuple(int(g) for g in args.geometry.split(",")) if args.geometry else None
    grid = render_feature_grid(model, geometry, args.cols)
    path = _inside(out, args.output)
    netpbm.write(path, grid)
    print(f"wrote {grid.shape[1]}x{grid.shape[0]} feature grid to {path}")
    return EXIT_OK


def cmd_detect_map(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    det = cfg.section("detect")
    image_path = args.image or det.get("image")
    if image_path is None:
        raise ConfigError("detect.image: missing (or pass --image)")
    image_path = Path(args.image) if args.image else cfg.path(image_path)
    if not image_path.exists():
        raise FileNotFoundError(f"image not found: {image_path}")
    image = netpbm.to_chw(netpbm.read(image_path))
    model = load(_model_path(args, out))
    clf = clf_mod.load_classifier(Path(args.classifier) if args.classifier else out / "classifier.json")
    stride = int(args.stride or det.get("stride", 1))
    positive = args.positive if args.positive is not None else det.get("positive_class")
    if positive is None:
        raise ConfigError("detect.positive_class: missing (or pass --positive)")
    pos = _positive(positive, clf.label_names or {c: str(c) for c in clf.classes})
    prob = probability_map(image, model, clf, pos, stride)
    path = _inside(out, args.output)
    netpbm.write(path, map_to_pgm(prob))
    r, c = np.unravel_index(int(np.argmax(prob)), prob.shape)
    print(f"map {prob.shape[1]}x{prob.shape[0]} (stride {stride}); peak {prob[r, c]:.4f} "
          f"at window ({r * stride}, {c * stride}); wrote {path}")
    return EXIT_OK


def cmd_bench_ae_vs_xae(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    ds = cfg.dataset()
    cv = cfg.section("crossval")
    k = int(args.folds or cv.get("folds", 10))
    seed = int(cv.get("seed", cfg.seed))
    pos = _positive(cv.get("positive_class"), ds.label_names)
    digest = cfg.digest()
    rows = []
    for mode in ("xae", "ae"):
        pcfg = _pipeline(cfg, ds, mode)
        res = crossval(pcfg, ds, k, seed, pos, bool(cv.get("stratified", True)))
        rows.append([mode, repr(res.mean["f_score"]), repr(res.std["f_score"]), k,
                     pcfg.spec.total_width, json.dumps(list(pcfg.clf_hidden)), cfg.seed, digest])
        print(f"{mode.upper()}+FCN: mean F-score {100 * res.mean['f_score']:.2f}% "
              f"± {100 * res.std['f_score']:.2f}% ({k}-fold)")
    with open(out / "bench_ae_vs_xae.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "mean_f_score", "std_f_score", "folds", "feature_width",
                    "classifier_hidden", "seed", "config_hash"])
        w.writerows(rows)
    return EXIT_OK


def cmd_import_patches(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir(args.out)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    ds = import_patches(manifest)
    path = _inside(out, args.output)
    save_patches(ds, path)
    print(f"imported {len(ds)} patches of geometry {ds.geometry} with labels "
          f"{[ds.label_names[i] for i in sorted(ds.label_names)]}; wrote {path}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override train.seed")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. train.epochs=5 (repeatable)")

    p = argparse.ArgumentParser(prog="xae", description="eXclusive Autoencoder toolkit")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("train-xae", parents=[common], help="train an XAE; writes model.json and train_log.csv")
    s.add_argument("--log-time", action="store_true", help="record wall-clock seconds in the log")
    s.set_defaults(func=cmd_train_xae)

    s = sub.add_parser("grad-check", parents=[common], help="analytic vs numeric gradients")
    s.add_argument("--inject-sign-error", metavar="TERM", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("extract", parents=[common], help="write XAE features as CSV")
    s.add_argument("--model")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train-clf", parents=[common], help="train the classifier head")
    s.add_argument("--model")
    s.set_defaults(func=cmd_train_clf)

    s = sub.add_parser("eval", parents=[common], help="evaluation report (CSV)")
    s.add_argument("--model")
    s.add_argument("--classifier")
    s.add_argument("--predictions", help="CSV with true,pred[,p:<class>...] columns")
    s.add_argument("--kfold", type=int, help="cross-validate the whole pipeline with K folds")
    s.add_argument("--positive", type=_parse_value, help="positive class label")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("feature-grid", parents=[common], help="render weight columns as a PGM")
    s.add_argument("--model")
    s.add_argument("--output", default="features.pgm")
    s.add_argument("--geometry", help="C,H,W when the model has none")
    s.add_argument("--cols", type=int)
    s.set_defaults(func=cmd_feature_grid)

    s = sub.add_parser("detect-map", parents=[common], help="sliding-window probability map (PGM)")
    s.add_argument("--image")
    s.add_argument("--model")
    s.add_argument("--classifier")
    s.add_argument("--stride", type=int)
    s.add_argument("--positive", type=_parse_value)
    s.add_argument("--output", default="probability_map.pgm")
    s.set_defaults(func=cmd_detect_map)

    s = sub.add_parser("bench-ae-vs-xae", parents=[common], help="k-fold XAE+FCN vs AE+FCN")
    s.add_argument("--folds", type=int)
    s.set_defaults(func=cmd_bench_ae_vs_xae)

    s = sub.add_parser("import-patches", parents=[common], help="PGM/PPM manifest -> XPD1 patch file")
    s.add_argument("--manifest", required=True)
    s.add_argument("--output", default="patches.xpd")
    s.set_defaults(func=cmd_import_patches)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PartitionError) as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except TrainingDiverged as exc:
        code, msg = EXIT_NUMERIC, f"numeric failure: {exc}"
    except FloatingPointError as exc:
        code, msg = EXIT_NUMERIC, f"numeric failure: {exc}"
    except (DataError, netpbm.NetpbmError, ModelError, clf_mod.ClassifierError, TrainingError,
            CostError, FileNotFoundError) as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    print(f"xae: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
