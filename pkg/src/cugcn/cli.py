"""Command-line entry point: ``cugcn <command> [flags]``.

Every command writes JSON-lines records under ``--out`` (default: the
``CUGCN_OUTPUT_DIR`` environment variable, else ``./cugcn-out``), prints a
short summary table, and renders figures unless ``--no-figures`` is given.
Failures exit nonzero with a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .data import (
    LOSO,
    SUBJECT_DEPENDENT,
    SyntheticConfig,
    default_positions,
    generate_synthetic,
    load_manifest,
    make_split,
    write_dataset,
)
from .errors import CugcnError, DivergenceError, ParameterError
from .graph import load_positions
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig

ENV_OUTPUT_DIR = "CUGCN_OUTPUT_DIR"
MODEL_FLAGS = ("depth", "hidden_dim", "variant", "mask_mode", "fixed_p", "mask_init_p", "gpr_init_gamma")


# ------------------------------------------------------------------ flag helpers


def _add_fields(parser, cls, include=None, rename=None):
    rename = rename or {}
    for f in dataclasses.fields(cls):
        if include is not None and f.name not in include:
            continue
        if f.default is dataclasses.MISSING:
            continue
        flag = "--" + rename.get(f.name, f.name)
        dest = rename.get(f.name, f.name)
        if isinstance(f.default, bool):
            parser.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=f.default)
        else:
            parser.add_argument(flag, dest=dest, type=type(f.default), default=f.default)


def _pick(args, cls, rename=None, skip=()):
    rename = rename or {}
    out = {}
    for f in dataclasses.fields(cls):
        key = rename.get(f.name, f.name)
        if f.name not in skip and hasattr(args, key):
            out[f.name] = getattr(args, key)
    return out


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _seed_list(text):
    """``5`` means seeds 0..4; ``0,3,7`` lists them."""
    return list(range(int(text))) if "," not in text else _int_list(text)


def _add_common(p):
    p.add_argument("--out", default=os.environ.get(ENV_OUTPUT_DIR, "cugcn-out"),
                   help=f"output directory (default: ${ENV_OUTPUT_DIR} or ./cugcn-out)")
    p.add_argument("--no-figures", dest="figures", action="store_false", help="skip figure rendering")


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="manifest file; omit to use the synthetic benchmark")
    g.add_argument("--bands", default="all", help="comma-separated band names or 'all'")
    g.add_argument("--adjacency", choices=("dist", "coh", "random"), default="dist")
    g.add_argument("--sigma", type=float, default=ex.BENCHMARK_SIGMA, help="distance kernel width")
    g.add_argument("--threshold", type=float, default=0.3, help="coherence threshold")
    g.add_argument("--density", type=float, default=0.1, help="random-graph edge density")
    g.add_argument("--protocol", choices=(SUBJECT_DEPENDENT, LOSO), default=SUBJECT_DEPENDENT)
    g.add_argument("--holdout_subject", type=int, default=None)
    g.add_argument("--split_seed", type=int, default=0)
    s = p.add_argument_group("synthetic data (used when --data is absent)")
    _add_fields(s, SyntheticConfig, rename={"seed": "data_seed"})


def _add_train(p):
    _add_fields(p.add_argument_group("training"), TrainConfig)


def _add_model(p):
    _add_fields(p.add_argument_group("model"), ModelConfig, include=MODEL_FLAGS)


# ------------------------------------------------------------------ data


def _data_source(args):
    source = {k: getattr(args, k) for k in ("data", "bands", "adjacency", "sigma", "threshold", "density",
                                          "protocol", "holdout_subject", "split_seed")}
    if args.data is None:
        source["synthetic"] = _pick(args, SyntheticConfig, rename={"seed": "data_seed"})
    return source


def _load_data(source):
    if source["data"] is None:
        ds = generate_synthetic(SyntheticConfig(**source["synthetic"]))
    else:
        manifest = Path(source["data"])
        pos_file = manifest.parent / "positions.txt"
        bands = None if source["bands"] == "all" else _str_list(source["bands"])
        ds = load_manifest(manifest, band_selection=bands, positions=None)
        ds.positions = load_positions(pos_file) if pos_file.exists() else default_positions(ds.n_nodes)
        if ds.positions.shape[0] != ds.n_nodes:
            raise ParameterError(f"{pos_file} lists {ds.positions.shape[0]} positions for {ds.n_nodes} nodes")
    if source["data"] is None and source["bands"] != "all":
        keep = [ds.band_names.index(b) for b in _str_list(source["bands"]) if b in ds.band_names]
        if len(keep) != len(_str_list(source["bands"])):
            raise ParameterError(f"unknown band in {source['bands']!r}; known: {', '.join(ds.band_names)}")
        ds = dataclasses.replace(ds, features=ds.features[:, :, keep],
                                 band_names=tuple(ds.band_names[i] for i in keep))
    ds = ds.with_adjacency(source["adjacency"], sigma=source["sigma"], threshold=source["threshold"],
                           density=source["density"], seed=source["split_seed"])
    ds.meta = {"source": source}
    split = make_split(ds, protocol=source["protocol"], holdout_subject=source["holdout_subject"],
                       seed=source["split_seed"])
    return ds, split


# ------------------------------------------------------------------ output


def _emit(path, records):
    ex.write_jsonl(path, records)
    return path


def _table(rows, cols):
    widths = [max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in cols]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(_fmt(r.get(c)).ljust(w) for c, w in zip(cols, widths)) for r in rows]
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return "" if v is None else str(v)


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ commands


def cmd_generate(args):
    out = _outdir(args)
    cfg = SyntheticConfig(**_pick(args, SyntheticConfig))
    ds = generate_synthetic(cfg)
    manifest = write_dataset(ds, out)
    counts = np.bincount(ds.labels, minlength=ds.n_classes)
    print(_table([{"class": n, "samples": int(c)} for n, c in zip(ds.class_names, counts)], ["class", "samples"]))
    print(f"wrote {len(ds)} samples, manifest {manifest}")
    return 0


def cmd_train(args):
    out = _outdir(args)
    source = _data_source(args)
    ds, split = _load_data(source)
    tc = TrainConfig(**_pick(args, TrainConfig))
    mc = ModelConfig(n_features=ds.n_features, n_nodes=ds.n_nodes, n_classes=ds.n_classes,
                     **{k: getattr(args, k) for k in MODEL_FLAGS})
    history_path = out / "history.jsonl"
    with open(history_path, "w", encoding="utf-8") as fh:
        def log(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        model, history, report = ex.train_and_evaluate(ds, split, mc, tc, log=log)
    extra = {"data": source, "train": dataclasses.asdict(tc), "best_epoch": history.best_epoch,
             "stopped_early": history.stopped_early}
    save_checkpoint(out / "checkpoint.npz", model, extra=extra)
    _emit(out / "report.jsonl", [report.to_dict()])
    if args.figures:
        from . import plotting
        plotting.plot_history(history.records, out / "history.png")
        plotting.plot_confusion(report, out / "confusion.png")
    last = history.records[-1]
    print(_table([{"epochs": len(history), "best_epoch": history.best_epoch, "train_acc": last["train_acc"],
                   "val_loss": last["val_loss"], "test_acc": report.accuracy}],
                 ["epochs", "best_epoch", "train_acc", "val_loss", "test_acc"]))
    return 0


def cmd_evaluate(args):
    out = _outdir(args)
    model, extra = load_checkpoint(args.checkpoint)
    source = _data_source(args) if args.data is not None else extra.get("data")
    if source is None:
        raise ParameterError("checkpoint has no data description; pass --data")
    ds, split = _load_data(source)
    echo = {"model": dataclasses.asdict(model.config), "train": extra.get("train", {}),
            "split": split.protocol, "dataset": ex._json_safe(ds.meta)}
    report = ex.evaluate(model, ds, split, config=echo, seed=model.seed)
    report.check()
    _emit(out / "report.jsonl", [report.to_dict()])
    if args.figures:
        from . import plotting
        plotting.plot_confusion(report, out / "confusion.png")
    rows = [{"class": n, "precision": p, "recall": r}
            for n, p, r in zip(report.class_names, report.precision, report.recall)]
    print(_table(rows, ["class", "precision", "recall"]))
    print(f"accuracy {report.accuracy:.4f}  subject mean {report.accuracy_mean:.4f}"
          f" +- {report.accuracy_std:.4f}  (n={report.n_test})")
    return 0


def cmd_sweep_depth(args):
    out = _outdir(args)
    ds, split = _load_data(_data_source(args))
    tc = TrainConfig(**_pick(args, TrainConfig))
    rows = ex.depth_sweep(ds, split, variants=_str_list(args.variants), depths=_int_list(args.depths),
                          seeds=_seed_list(args.seeds), train_config=tc, hidden_dim=args.hidden_dim)
    _emit(out / "sweep.jsonl", rows)
    if args.figures:
        from . import plotting
        plotting.plot_depth_sweep(rows, out / "sweep.png")
    print(_table(rows, ["variant", "depth", "mean", "std"]))
    return 0


def cmd_ablate(args):
    out = _outdir(args)
    ds, split = _load_data(_data_source(args))
    tc = TrainConfig(**_pick(args, TrainConfig))
    rows = ex.ablation_run(ds, split, _str_list(args.toggles), seeds=_seed_list(args.seeds), train_config=tc,
                           depth=args.depth, hidden_dim=args.hidden_dim)
    _emit(out / "ablation.jsonl", rows)
    if args.figures:
        from . import plotting
        plotting.plot_ablation(rows, out / "ablation.png")
    print(_table(rows, ["toggle", "mean", "std"]))
    return 0


def cmd_filter_curves(args):
    out = _outdir(args)
    rows = ex.filter_curves(_float_list(args.alphas), _int_list(args.depths), args.resolution, args.lam_max)
    _emit(out / "filter_curves.jsonl", rows)
    if args.figures:
        from . import plotting
        plotting.plot_filter_curves(rows, out / "filter_curves.png")
    summary = []
    for a in _float_list(args.alphas):
        for L in _int_list(args.depths):
            r = [row["response"] for row in rows if row["alpha"] == a and row["depth"] == L]
            summary.append({"alpha": a, "depth": L, "min": min(r), "max": max(r)})
    print(_table(summary, ["alpha", "depth", "min", "max"]))
    return 0


def cmd_gradcheck(args):
    out = _outdir(args)
    rows = ex.gradient_suite(seeds=_seed_list(args.seeds), n_nodes=args.n_nodes, step=args.step)
    for r in rows:
        r["pass"] = r["max_rel_error"] < args.tolerance
    _emit(out / "gradcheck.jsonl", rows)
    worst = {}
    for r in rows:
        worst[r["case"]] = max(worst.get(r["case"], 0.0), r["max_rel_error"])
    print(_table([{"case": k, "max_rel_error": f"{v:.2e}", "pass": v < args.tolerance} for k, v in worst.items()],
                 ["case", "max_rel_error", "pass"]))
    failed = [k for k, v in worst.items() if not v < args.tolerance]
    if failed:
        raise GradcheckFailure(f"gradient mismatch above {args.tolerance:g} in: {', '.join(failed)}")
    return 0


class GradcheckFailure(CugcnError):
    pass


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="cugcn", description="Uncertainty-masked GCN experiments on EEG-like graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset as feature files plus a manifest")
    _add_common(p)
    _add_fields(p, SyntheticConfig)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model; writes history, checkpoint and test report")
    _add_common(p)
    _add_data(p)
    _add_model(p)
    _add_train(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on its test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    _add_data(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-depth", help="accuracy against depth per model variant")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    p.add_argument("--variants", default=",".join(ex.SWEEP_VARIANTS))
    p.add_argument("--depths", default=",".join(map(str, ex.SWEEP_DEPTHS)))
    p.add_argument("--seeds", default="3", help="count or comma list")
    p.add_argument("--hidden_dim", type=int, default=32)
    p.set_defaults(func=cmd_sweep_depth)

    p = sub.add_parser("ablate", help="toggle comparisons beside the full model")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    default_toggles = ["no-mixup"] + [f"fixed-p={v}" for v in ex.FIXED_P_GRID] + list(ex.ADJACENCY_TOGGLES[1:])
    p.add_argument("--toggles", default=",".join(default_toggles),
                   help="comma list of no-mixup, fixed-p=P, adjacency=KIND, variant=NAME")
    p.add_argument("--seeds", default="5", help="count or comma list")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--hidden_dim", type=int, default=32)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("filter-curves", help="propagation filter responses over lambda")
    _add_common(p)
    p.add_argument("--alphas", default="0.1,0.5,0.6667,1.0")
    p.add_argument("--depths", default="1,2,3,8")
    p.add_argument("--resolution", type=int, default=151)
    p.add_argument("--lam_max", type=float, default=1.5)
    p.set_defaults(func=cmd_filter_curves)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _add_common(p)
    p.add_argument("--seeds", default="10", help="count or comma list")
    p.add_argument("--n_nodes", type=int, default=8)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CugcnError, ValueError, OSError, FloatingPointError) as exc:
        record = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, DivergenceError):
            record["snapshot"] = exc.snapshot
        sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
