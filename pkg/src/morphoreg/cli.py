"""Command-line front end: gen-data, train, eval, report.

Exit codes: 0 success, 1 validation error (bad arguments, bad inputs,
precondition failures), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import load_checkpoint
from .config import RunConfig, resolve_config
from .data import build_dataset, load_split, measurement_kinds, read_manifest
from .metrics import aggregate, improvement_pct, read_report_csv, summarize, write_report_csv
from .nn import build_model, desk_network, single_head
from .preprocessing import TargetMinMaxScaler
from .training import (
    TrainData,
    evaluate_predictions,
    predict_normalized,
    train_model,
)
from .validation import ValidationError

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        raise ValidationError(message)


def _add_common(parser: _Parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed-data", type=int, dest="seed_data")
    parser.add_argument("--seed-model", type=int, dest="seed_model")
    parser.add_argument("--seed-train", type=int, dest="seed_train")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    parser.add_argument(
        "--print-config", action="store_true", help="print the resolved configuration and exit"
    )


def _common_overrides(args) -> dict:
    return {
        "seed_data": args.seed_data,
        "seed_model": args.seed_model,
        "seed_train": args.seed_train,
    }


def _maybe_print_config(args, cfg: RunConfig) -> bool:
    if args.print_config:
        for key, value in cfg.to_mapping().items():
            print(f"{key} = {value}")
        return True
    return False


def _require_out(args) -> str:
    if not args.out:
        raise ValidationError("--out DIR is required")
    return args.out


def _prepare_out_dir(path: str, force: bool):
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ValidationError(f"output directory {path!r} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)


def _find_manifest(data_path: str) -> str:
    if os.path.isdir(data_path):
        candidate = os.path.join(data_path, "manifest.csv")
        if not os.path.exists(candidate):
            raise ValidationError(f"{data_path!r} does not contain a manifest.csv")
        return candidate
    if not os.path.exists(data_path):
        raise ValidationError(f"dataset path {data_path!r} does not exist")
    return data_path


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    overrides = _common_overrides(args)
    for key in ("n_subjects", "volume_dim", "supersampling", "scans_min", "scans_max", "schedule"):
        overrides[key] = getattr(args, key)
    cfg = resolve_config(args.config, overrides)
    if _maybe_print_config(args, cfg):
        return 0
    out = _require_out(args)
    manifest = build_dataset(
        out,
        n_subjects=cfg.n_subjects,
        dims=cfg.dims(),
        voxel_size=cfg.voxel_size,
        supersampling=cfg.supersampling,
        scans_per_subject=(cfg.scans_min, cfg.scans_max),
        ratios=cfg.ratios(),
        seed=cfg.seed_data,
        force=args.force,
    )
    cfg.write(os.path.join(out, "config.resolved"))
    records, names = read_manifest(manifest)
    counts = {split: sum(r.split == split for r in records) for split in ("train", "validation", "test")}
    print(f"wrote {len(records)} scans for {cfg.n_subjects} subjects to {out}")
    print(f"splits (scans): {counts}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    overrides = _common_overrides(args)
    overrides["schedule"] = args.schedule
    if args.epochs is not None:
        overrides["main_epochs"] = args.epochs
    if args.swa_cycles is not None:
        overrides["swa_cycles"] = args.swa_cycles
    if args.heads is not None:
        overrides["n_heads"] = args.heads
    cfg = resolve_config(args.config, overrides)
    if _maybe_print_config(args, cfg):
        return 0
    if not args.data:
        raise ValidationError("--data PATH (dataset directory or manifest) is required")
    out = _require_out(args)
    _prepare_out_dir(out, args.force)

    manifest = _find_manifest(args.data)
    records, names = read_manifest(manifest)
    X_train, Y_train, names, _ = load_split(manifest, "train", records, names)
    X_val, Y_val, _, _ = load_split(manifest, "validation", records, names)
    kinds = measurement_kinds(names)
    scaler = TargetMinMaxScaler(measurement_names=names).fit(Y_train)

    network = desk_network(
        n_outputs=len(names),
        input_dims=tuple(X_train.shape[2:]),
        stem_channels=cfg.stem_channels,
        stage_channels=cfg.stage_channel_tuple(),
    )
    if cfg.n_heads == 1:
        network = single_head(network)
    elif cfg.n_heads != network.n_heads:
        raise ValidationError(
            f"n_heads={cfg.n_heads} not supported: use 1 or {network.n_heads}"
        )
    state = build_model(network, seed=cfg.seed_model)

    data = TrainData(
        X_train=X_train,
        Y_train_norm=scaler.transform(Y_train),
        X_val=X_val,
        Y_val_raw=Y_val,
        scaler=scaler,
        names=names,
        kinds=kinds,
    )
    checkpoint_dir = os.path.join(out, "checkpoints")
    os.makedirs(checkpoint_dir, exist_ok=True)
    cfg.write(os.path.join(out, "config.resolved"))

    result = train_model(
        state,
        data,
        cfg.train_config(),
        log_path=os.path.join(out, "train_log.csv"),
        checkpoint_dir=checkpoint_dir,
        progress=print,
    )
    print(
        f"done: best epoch {result.best_epoch} (val mean ICC {result.best_val_icc:+.4f}), "
        f"final val mean ICC {result.final_val_icc:+.4f}"
    )
    print(f"artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    state, scaler, _meta = load_checkpoint(args.checkpoint)
    if scaler is None:
        raise ValidationError(f"checkpoint {args.checkpoint!r} carries no target scaler")
    manifest = _find_manifest(args.data)
    records, names = read_manifest(manifest)
    if state.spec.n_outputs != len(names):
        raise ValidationError(
            f"checkpoint predicts {state.spec.n_outputs} measurements but the "
            f"manifest has {len(names)}"
        )
    X, Y, names, _ = load_split(manifest, args.split, records, names)
    kinds = measurement_kinds(names)
    preds = scaler.inverse_transform(predict_normalized(state, X, batch_size=6))
    entries = evaluate_predictions(preds, Y, names, kinds)

    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, f"report_{args.split}.csv")
    write_report_csv(report_path, entries)

    baseline = read_report_csv(args.compare) if args.compare else None
    text = summarize(entries, baseline=baseline)
    summary_path = os.path.join(out_dir, f"report_{args.split}.txt")
    with open(summary_path, "w") as fh:
        fh.write(text)
    print(text, end="")
    print(f"report written to {report_path}")
    return 0


# ---------------------------------------------------------------------------
# report


def _report_table(reports: dict[str, list], markdown: bool) -> str:
    kinds_order = ["volume", "thickness", "curvature"]
    lines = []
    header = ["model", "kind", "n", "mean_icc", "sd", "poor", "fair", "good", "excellent"]
    rows = []
    baseline_name = next(iter(reports))
    base_agg = aggregate(reports[baseline_name])
    for name, entries in reports.items():
        agg = aggregate(entries)
        for kind in ["overall"] + [k for k in kinds_order if k in agg.per_kind]:
            stats = agg.overall if kind == "overall" else agg.per_kind[kind]
            base_stats = (
                base_agg.overall if kind == "overall" else base_agg.per_kind.get(kind)
            )
            row = [
                name,
                kind,
                str(stats.count),
                f"{stats.mean:+.4f}",
                f"{stats.sd:.4f}",
                *(str(stats.bands[b]) for b in ("poor", "fair", "good", "excellent")),
            ]
            if name != baseline_name and base_stats is not None and base_stats.mean > 0:
                row[3] += f" ({improvement_pct(stats.mean, base_stats.mean):+.2f}%)"
            rows.append(row)
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    if markdown:
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join("---" for _ in header) + "|")
        for r in rows:
            lines.append("| " + " | ".join(r) + " |")
    else:
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    if not args.reports:
        raise ValidationError("pass at least one report CSV")
    reports = {}
    reference_names = None
    for path in args.reports:
        entries = read_report_csv(path)
        names = sorted(e.name for e in entries)
        if reference_names is None:
            reference_names = names
        elif names != reference_names:
            raise ValidationError(
                f"report {path!r} covers different measurements than {args.reports[0]!r}"
            )
        label = os.path.splitext(os.path.basename(path))[0]
        if label in reports:
            label = path
        reports[label] = entries
    print(_report_table(reports, markdown=args.markdown), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="morphoreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    _add_common(p_gen)
    p_gen.add_argument("--subjects", type=int, dest="n_subjects")
    p_gen.add_argument("--dim", type=int, dest="volume_dim")
    p_gen.add_argument("--supersample", type=int, dest="supersampling")
    p_gen.add_argument("--scans-min", type=int, dest="scans_min")
    p_gen.add_argument("--scans-max", type=int, dest="scans_max")
    p_gen.add_argument("--schedule", choices=("desk", "paper", "smoke"), default=None)
    p_gen.set_defaults(func=cmd_gen_data)

    p_train = sub.add_parser("train", help="run the full training recipe")
    _add_common(p_train)
    p_train.add_argument("--data", help="dataset directory or manifest.csv")
    p_train.add_argument("--schedule", choices=("desk", "paper", "smoke"), default=None)
    p_train.add_argument("--epochs", type=int, help="override main_epochs")
    p_train.add_argument("--swa-cycles", type=int, dest="swa_cycles")
    p_train.add_argument("--heads", type=int, help="1 (ablation) or one per stage")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset directory or manifest.csv")
    p_eval.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p_eval.add_argument("--out", help="directory for report files (default: checkpoint dir)")
    p_eval.add_argument("--compare", help="baseline report CSV for improvement percentages")
    p_eval.set_defaults(func=cmd_eval)

    p_rep = sub.add_parser("report", help="tabulate and compare report CSVs")
    p_rep.add_argument("reports", nargs="*")
    p_rep.add_argument("--markdown", action="store_true")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - runtime failure contract
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
