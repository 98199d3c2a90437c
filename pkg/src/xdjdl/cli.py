"""Command-line front end: ``xdjdl {synth,preprocess,train,infer,eval}``.

Every command reads one JSON config (``--config``), writes into ``--out``
and is deterministic for a given config and seed.  Exit codes: 0 success,
2 configuration error, 3 I/O or file-format error, 4 numeric or pipeline
failure.
"""

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .dict_learning import HyperParams, LcXdjdlModel, train_lc_xdjdl, train_xdjdl
from .errors import FormatError, XdjdlError
from .evaluate import effective_rates, evaluate_batch
from .inference import (DctBaselineModel, align_batch, infer_dct_baseline, infer_ecg,
                        infer_ecg_lc, train_dct_baseline)
from .preprocess import CyclePairSet, build_dataset, chronological_split, cycles_after
from .synthetic import EcgTemplateParams, gen_planted_model, gen_synthetic_record

logger = logging.getLogger("xdjdl")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4

DEFAULTS = {
    "synth": {
        "kind": "records",
        "n_records": 2,
        "duration": 60.0,
        "fs": 125.0,
        "hr_bpm": 60.0,
        "noise_std": 0.02,
        "ppg_noise_std": None,
        "rr_jitter": 0.0,
        "pulse_transit": 0.2,
        "labels": None,
        "seed": 0,
        # planted-model generator
        "d": 32, "k_e": 24, "k_p": 48, "t_e": 3, "t_p": 3, "n": 400,
        "class_count": None, "nonnegative": False, "class_spread": None,
    },
    "preprocess": {"d": 300, "smoothing": 300.0, "mode": "r2r", "test_mode": None},
    "train": {"variant": "xdjdl", "k_e": 32, "k_p": 64, "t_e": 5, "t_p": 5,
              "alpha": 1.0, "beta": 1.0, "gamma": 1.0, "ridge_lambda": 1e-3,
              "max_iters": 30, "rel_tol": 1e-4, "seed": 0, "ones_per_class": 1},
    "split": {"train_ratio": 0.8},
    "paths": {"records": None, "cycles": "cycles", "test_cycles": "cycles_test",
              "model": "model.xdjd", "report": "report.json"},
}

VARIANTS = ("xdjdl", "lc_xdjdl", "dct")
MODES = ("r2r", "o2o")


class ConfigError(ValueError):
    pass


def load_config(path=None, seed=None):
    """Merge a JSON config over the defaults and validate it."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        for sec, vals in user.items():
            if sec not in cfg:
                raise ConfigError(f"unknown config section {sec!r}")
            if not isinstance(vals, dict):
                raise ConfigError(f"section {sec!r} must be an object")
            for k, v in vals.items():
                if k not in cfg[sec]:
                    raise ConfigError(f"unknown field {sec}.{k}")
                cfg[sec][k] = v
    if seed is not None:
        cfg["synth"]["seed"] = int(seed)
        cfg["train"]["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def _field(cfg, sec, key, cond, what):
    v = cfg[sec][key]
    try:
        ok = cond(v)
    except TypeError:
        ok = False
    if not ok:
        raise ConfigError(f"{sec}.{key} {what}, got {v!r}")


def validate_config(cfg):
    pos = lambda v: v is not None and v > 0
    s = cfg["synth"]
    _field(cfg, "synth", "kind", lambda v: v in ("records", "planted"), "must be 'records' or 'planted'")
    hr = s["hr_bpm"] if isinstance(s["hr_bpm"], list) else [s["hr_bpm"]]
    if not hr or not all(isinstance(h, (int, float)) and h > 0 for h in hr):
        raise ConfigError(f"synth.hr_bpm must be positive, got {s['hr_bpm']!r}")
    for k in ("n_records", "duration", "fs", "d", "k_e", "k_p", "t_e", "t_p", "n"):
        _field(cfg, "synth", k, pos, "must be positive")
    for k in ("noise_std", "rr_jitter", "pulse_transit"):
        _field(cfg, "synth", k, lambda v: v >= 0, "must be nonnegative")
    if s["labels"] is not None and len(s["labels"]) != s["n_records"]:
        raise ConfigError("synth.labels needs one class per record")

    p = cfg["preprocess"]
    _field(cfg, "preprocess", "d", lambda v: int(v) == v and v >= 8, "must be an integer >= 8")
    _field(cfg, "preprocess", "smoothing", lambda v: v >= 0, "must be nonnegative")
    _field(cfg, "preprocess", "mode", lambda v: v in MODES, "must be 'r2r' or 'o2o'")
    if p["test_mode"] is not None and p["test_mode"] not in MODES:
        raise ConfigError(f"preprocess.test_mode must be 'r2r', 'o2o' or null, got {p['test_mode']!r}")

    t = cfg["train"]
    _field(cfg, "train", "variant", lambda v: v in VARIANTS, f"must be one of {VARIANTS}")
    try:
        hyper_from(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    _field(cfg, "split", "train_ratio", lambda v: 0 < v < 1, "must lie in (0, 1)")
    if t["variant"] == "lc_xdjdl" and s["kind"] == "records" and s["labels"] is None \
            and cfg["paths"]["records"] is None:
        logger.warning("lc_xdjdl without labels: every cycle gets class 0")


def hyper_from(cfg):
    t = {k: v for k, v in cfg["train"].items() if k != "variant"}
    return HyperParams(**t)


# ---------------------------------------------------------------- commands

def _records_manifest(out):
    return out / "synth.json"


def cmd_synth(cfg, out):
    s = cfg["synth"]
    out.mkdir(parents=True, exist_ok=True)
    if s["kind"] == "planted":
        model, X_e, X_p, labels = gen_planted_model(
            s["d"], s["k_e"], s["k_p"], s["t_e"], s["t_p"], s["n"],
            class_count=s["class_count"], seed=s["seed"],
            nonnegative=s["nonnegative"], class_spread=s["class_spread"])
        n = X_p.shape[1]
        cycles = CyclePairSet(P=X_p, E=X_e, fs=float(s["fs"]), mode="planted", labels=labels,
                              lengths=np.full(n, s["d"]), meta={"planted": True})
        data_io.write_cycles(cycles, out / cfg["paths"]["cycles"])
        data_io.write_json({"kind": "planted", "seed": s["seed"],
                            "supports": [np.flatnonzero(model.codes[:, j]).tolist() for j in range(n)]},
                           out / "planted_truth.json")
        return
    hrs = s["hr_bpm"] if isinstance(s["hr_bpm"], list) else [s["hr_bpm"]] * s["n_records"]
    names = []
    for i in range(s["n_records"]):
        params = EcgTemplateParams(hr_bpm=float(hrs[i % len(hrs)]), noise_std=s["noise_std"],
                                   ppg_noise_std=s["ppg_noise_std"], rr_jitter=s["rr_jitter"],
                                   pulse_transit=s["pulse_transit"], seed=s["seed"] + i)
        rec = gen_synthetic_record(params, s["duration"], s["fs"])
        name = f"record_{i:03d}"
        data_io.write_signals(rec, out / f"{name}.csv")
        truth = rec.truth()
        truth["params"] = params.to_dict()
        data_io.write_json(truth, out / f"{name}.fiducials.json")
        names.append(f"{name}.csv")
    data_io.write_json({"records": names, "labels": s["labels"]}, _records_manifest(out))


def _record_list(cfg, out):
    paths = cfg["paths"]["records"]
    labels = cfg["synth"]["labels"]
    if paths is None:
        manifest = json.loads(_records_manifest(out).read_text(encoding="utf-8"))
        paths = [str(out / p) for p in manifest["records"]]
        labels = manifest.get("labels")
    return paths, labels


def cmd_preprocess(cfg, out):
    p = cfg["preprocess"]
    paths, labels = _record_list(cfg, out)
    records = [data_io.read_signals(f) for f in paths]
    ds = build_dataset(records, mode=p["mode"], d=int(p["d"]), smoothing=p["smoothing"], labels=labels)
    data_io.write_cycles(ds, out / cfg["paths"]["cycles"])
    if p["test_mode"] and p["test_mode"] != p["mode"]:
        test = build_dataset(records, mode=p["test_mode"], d=int(p["d"]),
                             smoothing=p["smoothing"], labels=labels)
        data_io.write_cycles(test, out / cfg["paths"]["test_cycles"])
    logger.info("preprocessed %d cycles (%d skipped)", ds.n, ds.skipped)


def _split(cfg, out):
    return json.loads((out / "split.json").read_text(encoding="utf-8"))


def cmd_train(cfg, out):
    ds = data_io.read_cycles(out / cfg["paths"]["cycles"])
    train_idx, test_idx, bounds = chronological_split(ds, cfg["split"]["train_ratio"])
    data_io.write_json({"train_ratio": cfg["split"]["train_ratio"],
                        "train": train_idx.tolist(), "test": test_idx.tolist(),
                        "boundaries": {str(k): v for k, v in bounds.items()}},
                       out / "split.json")
    tr = ds.subset(train_idx)
    variant = cfg["train"]["variant"]
    if variant == "dct":
        model = train_dct_baseline(tr.E, tr.P, ridge=cfg["train"]["ridge_lambda"])
    else:
        hyper = hyper_from(cfg)
        if variant == "lc_xdjdl":
            labels = tr.labels if tr.labels is not None else np.zeros(tr.n, dtype=int)
            class_count = int(ds.labels.max()) + 1 if ds.labels is not None else 1
            model = train_lc_xdjdl(tr.E, tr.P, labels, hyper, class_count=class_count)
        else:
            model = train_xdjdl(tr.E, tr.P, hyper)
        with open(out / "train_trace.csv", "w", encoding="utf-8") as fh:
            fh.write("iteration,objective\n")
            for i, v in enumerate(model.trace):
                fh.write(f"{i},{v:.17g}\n")
    data_io.save_model(model, out / cfg["paths"]["model"])


def _test_set(cfg, out, split):
    """Test cycles: the held-out tail of the training segmentation, or the
    cycles of the alternative segmentation starting after each record's
    split boundary."""
    p = cfg["preprocess"]
    if p["test_mode"] and p["test_mode"] != p["mode"]:
        ds = data_io.read_cycles(out / cfg["paths"]["test_cycles"])
        bounds = {int(k): v for k, v in split["boundaries"].items()}
        idx = cycles_after(ds, bounds)
        return ds, idx, True
    ds = data_io.read_cycles(out / cfg["paths"]["cycles"])
    return ds, np.asarray(split["test"], dtype=int), False


def cmd_infer(cfg, out):
    model = data_io.load_model(out / cfg["paths"]["model"])
    split = _split(cfg, out)
    ds, idx, cross = _test_set(cfg, out, split)
    if idx.size == 0:
        raise XdjdlError("no test cycles")
    test = ds.subset(idx)
    if isinstance(model, DctBaselineModel):
        R = infer_dct_baseline(model, test.P)
    elif isinstance(model, LcXdjdlModel):
        labels = test.labels if test.labels is not None else np.zeros(test.n, dtype=int)
        R = infer_ecg_lc(model, test.P, labels).R_e
    else:
        R = infer_ecg(model, test.P).R_e
    if cross:
        R = align_batch(test.E, R)
    rates = (effective_rates(test.d, test.lengths, test.fs) if test.lengths is not None
             else np.full(test.n, test.fs))
    data_io.write_matrix_csv(R, out / "reconstruction.csv")
    data_io.write_matrix_csv(test.E, out / "reference.csv")
    data_io.write_json({"indices": idx.tolist(), "mode": test.mode, "offset_compensated": cross,
                        "fs_effective": rates.tolist()}, out / "infer.json")
    # plot-ready reference vs reconstruction for the first few cycles
    with open(out / "plot_cycles.csv", "w", encoding="utf-8") as fh:
        fh.write("cycle,sample,reference,reconstruction\n")
        for j in range(min(5, test.n)):
            for i in range(test.d):
                fh.write(f"{j},{i},{test.E[i, j]:.17g},{R[i, j]:.17g}\n")


def _fmt_stat(v):
    return "   n/a" if v is None else f"{v:6.3f}"


def cmd_eval(cfg, out):
    R = data_io.read_matrix_csv(out / "reconstruction.csv")
    T = data_io.read_matrix_csv(out / "reference.csv")
    info = json.loads((out / "infer.json").read_text(encoding="utf-8"))
    report = evaluate_batch(R, T, np.asarray(info["fs_effective"]))
    split = _split(cfg, out)
    report.extra = {"variant": cfg["train"]["variant"], "test_mode": info["mode"],
                    "offset_compensated": info["offset_compensated"],
                    "test_indices": info["indices"],
                    "split": {"train_ratio": split["train_ratio"], "train": split["train"],
                              "test": split["test"], "boundaries": split["boundaries"]}}
    data_io.write_report(report, out / cfg["paths"]["report"])
    data_io.write_per_cycle_csv(report, out / "per_cycle.csv")
    print(f"cycles {report.n_cycles}  effective {report.n_effective} "
          f"({100 * report.effective_ratio:.1f}%)  degenerate {report.excluded_degenerate}")
    print("metric    mean    std  median")
    for name, st in (("rho", report.rho), ("rRMSE", report.rrmse)):
        print(f"{name:<7} {_fmt_stat(st['mean'])} {_fmt_stat(st['std'])} {_fmt_stat(st['median'])}")
    for k, v in report.intervals.items():
        mae = "n/a" if v["mae"] is None else f"{1000 * v['mae']:.1f} ms"
        print(f"{k.upper()} MAE {mae}")


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval}


def build_parser():
    ap = argparse.ArgumentParser(prog="xdjdl", description="PPG-to-ECG reconstruction pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="JSON run config")
        sp.add_argument("--seed", type=int, default=None, help="overrides synth/train seeds")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args.out)
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (XdjdlError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
