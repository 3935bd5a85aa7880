"""Command-line entry point wiring data, model and experiment runs together.

Every run that produces artifacts writes a manifest (resolved config, seed,
argv, tool version) before any computation starts; `rerun` replays a manifest.
Flags mirror the architecture symbols (--k, --lt, --lstep, --ltoken, --nhead,
--layers) and default to the reference recipe.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ABLATIONS, TOKEN_GRANULARITIES, ModelConfig
from .data import downsample, loso_split, segment
from .errors import PatchFormerError
from .model import build, param_count
from .rng import Rng
from .segio import load_recording_csv, load_segments, save_segments
from .synth import SynthEffect, synth_generate
from .train import TrainConfig, evaluate_segments, train
from .runners import ablate, run_loso, sweep_patch_length, sweep_table
from .verify import THRESHOLD, full_model_grad_check, op_grad_checks


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int
    config: dict
    artifacts: dict
    tool_version: str
    timestamp: str

    def write(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _emit(obj):
    print(_canonical(obj), flush=True)


def _default_seed() -> int:
    return int(os.environ.get("PATCHFORMER_SEED", "0"))


def _parse_graphs(text):
    if text is None:
        return None
    return [[int(ch) for ch in group.split(",") if ch != ""] for group in text.split(";")]


def _parse_channels(text):
    if text is None:
        return None
    return tuple(int(ch) for ch in text.split(",") if ch != "")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=_default_seed(),
                   help="run seed (default: $PATCHFORMER_SEED or 0)")


def _add_print_config(p):
    p.add_argument("--print-config", action="store_true",
                   help="emit the resolved configuration as canonical JSON and exit")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--k", type=int, default=32, help="CNN kernel count")
    g.add_argument("--kernel-len", type=int, default=None,
                   help="temporal kernel length (default: round(0.5 * f_s))")
    g.add_argument("--lt", type=int, default=20, help="temporal patch length")
    g.add_argument("--lstep", type=int, default=5, help="temporal patch step")
    g.add_argument("--ltoken", type=int, default=32, help="token dimension")
    g.add_argument("--nhead", type=int, default=32, help="attention heads")
    g.add_argument("--layers", type=int, default=4, help="transformer layers")
    g.add_argument("--ffn-mult", type=int, default=4, help="feed-forward width multiplier")
    g.add_argument("--dropout", type=float, default=0.5)
    g.add_argument("--no-pos", action="store_true", help="disable positional embeddings")
    g.add_argument("--ablation", choices=ABLATIONS, default="full")
    g.add_argument("--graphs", type=str, default=None,
                   help="local channel groups as index lists, e.g. '0,1;2,3;4,5'")
    g.add_argument("--token-granularity", choices=TOKEN_GRANULARITIES, default="patch_window")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--weight-decay", type=float, default=1e-5)
    g.add_argument("--eta-min", type=float, default=0.0)
    g.add_argument("--decoupled-wd", action="store_true",
                   help="decoupled weight decay instead of L2-in-gradient")


def _model_config(args, ds) -> ModelConfig:
    return ModelConfig(
        c=ds.c, l=ds.l, f_s=ds.f_s,
        k=args.k, temporal_kernel_len=args.kernel_len,
        local_graphs=_parse_graphs(args.graphs),
        l_t=args.lt, l_step=args.lstep, l_token=args.ltoken,
        n_head=args.nhead, n_layers=args.layers, ffn_mult=args.ffn_mult,
        dropout_p=args.dropout, positional_embedding=not args.no_pos,
        ablation=args.ablation, token_granularity=args.token_granularity,
    ).validate()


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr0=args.lr, weight_decay=args.weight_decay, epochs=args.epochs,
        batch_size=args.batch_size, eta_min=args.eta_min, seed=args.seed,
        decoupled_decay=args.decoupled_wd,
    ).validate()


def _manifest(args, command: str, config: dict, artifacts: dict) -> RunManifest:
    return RunManifest(
        command=command,
        argv=list(args._argv),
        seed=getattr(args, "seed", 0),
        config=config,
        artifacts={k: str(v) for k, v in artifacts.items()},
        tool_version=__version__,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )


# -- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    effect = SynthEffect(
        freq_hz=args.freq, amplitude=args.amplitude,
        channels=_parse_channels(args.effect_channels),
        gain_jitter=args.jitter, noise_scale=args.noise_scale,
    )
    config = {
        "data": {
            "n_subjects": args.subjects, "segs_per_class": args.per_class,
            "c": args.channels, "l": args.length, "f_s": args.fs,
            "effect": asdict(effect),
        },
        "seed": args.seed,
    }
    if args.print_config:
        print(_canonical(config))
        return 0
    out = Path(args.out)
    manifest = _manifest(args, "synth", config, {"segments": out})
    manifest.write(out.with_name(out.name + ".manifest.json"))
    ds = synth_generate(args.subjects, args.per_class, args.channels, args.length,
                        args.fs, effect, Rng(args.seed))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_segments(ds, out)
    _emit({"event": "synth", "n": ds.n, "c": ds.c, "l": ds.l,
           "null_effect": ds.metadata["null_effect"], "path": str(out)})
    return 0


def cmd_preprocess(args) -> int:
    config = {
        "data": {
            "input": args.input, "target_fs": args.target_fs, "win_s": args.win,
            "overlap": args.overlap, "keep_s": args.keep, "subject": args.subject,
            "label": args.label, "fs": args.fs, "onset": args.onset, "offset": args.offset,
        },
        "seed": args.seed,
    }
    if args.print_config:
        print(_canonical(config))
        return 0
    out = Path(args.out)
    _manifest(args, "preprocess", config, {"segments": out}).write(
        out.with_name(out.name + ".manifest.json"))

    if args.input.endswith(".csv"):
        rec = load_recording_csv(args.input, f_s=args.fs, subject_id=args.subject,
                                 task_label=args.label, task_onset=args.onset,
                                 task_offset=args.offset)
        rec = downsample(rec, args.target_fs)
        ds = segment(rec, win_s=args.win, overlap=args.overlap, keep_s=args.keep)
    else:
        # already-segmented input: validate the container and rewrite it
        ds = load_segments(args.input)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_segments(ds, out)
    _emit({"event": "preprocess", "n": ds.n, "c": ds.c, "l": ds.l,
           "f_s": ds.f_s, "path": str(out)})
    return 0


def _resolve_run(args):
    ds = load_segments(args.data)
    mc = _model_config(args, ds)
    tc = _train_config(args)
    return ds, mc, tc


def cmd_train(args) -> int:
    ds, mc, tc = _resolve_run(args)
    config = {"model": mc.to_dict(), "train": tc.to_dict(), "seed": args.seed}
    if args.print_config:
        print(_canonical(config))
        return 0
    out = Path(args.out)
    artifacts = {"checkpoint": out / "checkpoint.ckpt", "history": out / "history.json"}
    _manifest(args, "train", config, artifacts).write(out / "manifest.json")

    subject = args.test_subject
    root = Rng(tc.seed)
    fold = loso_split(ds, subject, val_frac=0.2, rng=root.spawn(f"split:{subject}"))
    model = build(mc, root.spawn(f"init:{subject}"))
    best_state, best_epoch, history = train(
        model, fold, tc, root.spawn(f"train:{subject}"),
        log_fn=None if args.quiet else _emit,
    )
    model.load_state(best_state)

    from .checkpoint import save_model

    save_model(model, artifacts["checkpoint"])
    Path(artifacts["history"]).write_text(json.dumps(history, indent=2))
    ev = evaluate_segments(model, fold.test, tc.batch_size)
    _emit({"event": "test", "subject": subject, "best_epoch": best_epoch,
           "acc": ev["acc"], "auc": ev["auc"], "macro_f1": ev["macro_f1"]})
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_model
    from .errors import MetricUndefinedError

    model = load_model(args.checkpoint)
    ds = load_segments(args.data)
    if args.subject is not None:
        ds = ds.subset(np.flatnonzero(ds.subject_ids == args.subject))
    if args.print_config:
        print(_canonical({"model": model.config.to_dict(), "n_segments": ds.n}))
        return 0
    result = {"event": "eval", "n": ds.n, "params": param_count(model.config)}
    ev = None
    try:
        ev = evaluate_segments(model, ds, args.batch_size)
    except MetricUndefinedError as exc:
        result["warning"] = str(exc)
    if ev is not None:
        result.update(acc=ev["acc"], auc=ev["auc"], macro_f1=ev["macro_f1"])
    _emit(result)
    return 0


def _write_report(report, out: Path, name: str = "report"):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(
        json.dumps(report.to_dict(include_timing=False), indent=2, sort_keys=True))
    report.save_csv(out / f"{name}.csv")


def cmd_loso(args) -> int:
    ds, mc, tc = _resolve_run(args)
    config = {"model": mc.to_dict(), "train": tc.to_dict(), "seed": args.seed}
    if args.print_config:
        print(_canonical(config))
        return 0
    out = Path(args.out)
    _manifest(args, "loso", config,
              {"report_json": out / "report.json", "report_csv": out / "report.csv"}
              ).write(out / "manifest.json")
    report = run_loso(ds, mc, tc, parallel_folds=args.parallel_folds, out_dir=out,
                      log_fn=None if args.quiet else _emit)
    _write_report(report, out)
    _emit({"event": "loso_done", "summary": report.summary(),
           "wall_clock_s": report.wall_clock_s})
    return 0


def cmd_ablate(args) -> int:
    ds, mc, tc = _resolve_run(args)
    config = {"model": mc.to_dict(), "train": tc.to_dict(), "seed": args.seed,
              "variant": args.variant}
    if args.print_config:
        print(_canonical(config))
        return 0
    out = Path(args.out)
    _manifest(args, "ablate", config, {"report_json": out / "report.json"}).write(
        out / "manifest.json")
    report = ablate(ds, mc, tc, args.variant, parallel_folds=args.parallel_folds,
                    out_dir=out, log_fn=None if args.quiet else _emit)
    _write_report(report, out)
    _emit({"event": "ablate_done", "variant": args.variant, "summary": report.summary()})
    return 0


def cmd_sweep(args) -> int:
    ds, mc, tc = _resolve_run(args)
    lengths = [int(v) for v in args.lengths.split(",")]
    config = {"model": mc.to_dict(), "train": tc.to_dict(), "seed": args.seed,
              "lengths": lengths}
    if args.print_config:
        print(_canonical(config))
        return 0
    out = Path(args.out)
    _manifest(args, "sweep", config, {"table": out / "sweep.csv"}).write(out / "manifest.json")
    reports = sweep_patch_length(ds, mc, tc, lengths, parallel_folds=args.parallel_folds,
                                 log_fn=None if args.quiet else _emit)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_table(reports))
    for rep in reports:
        _write_report(rep, out, name=f"report_{rep.label.replace('=', '_')}")
    print(sweep_table(reports), end="")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    if args.mode in ("ops", "both"):
        for name, err in op_grad_checks(trials=args.trials, eps=args.eps).items():
            _emit({"check": name, "max_rel_err": err, "ok": bool(err < THRESHOLD)})
            worst = max(worst, err)
    if args.mode in ("full", "both"):
        err = full_model_grad_check(eps=args.eps)
        _emit({"check": "full_model", "max_rel_err": err, "ok": bool(err < THRESHOLD)})
        worst = max(worst, err)
    _emit({"event": "gradcheck_done", "worst": worst, "ok": bool(worst < THRESHOLD)})
    return 0 if worst < THRESHOLD else 1


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if args.out is not None:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = args.out
        else:
            argv += ["--out", args.out]
    return main(argv)


# -- parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchformer",
        description="Spatial-temporal EEG patch transformer: data, training and evaluation runs.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled segment file")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--length", type=int, default=160)
    p.add_argument("--fs", type=float, default=40.0)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--freq", type=float, default=10.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--jitter", type=float, default=0.2)
    p.add_argument("--effect-channels", type=str, default=None,
                   help="comma-separated channel indices carrying the class effect")
    _add_seed(p)
    _add_print_config(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="downsample and window a recording into segments")
    p.add_argument("--input", required=True, help="CSV recording or existing segment file")
    p.add_argument("--out", required=True)
    p.add_argument("--fs", type=float, default=1000.0, help="CSV sampling rate")
    p.add_argument("--target-fs", type=float, default=250.0)
    p.add_argument("--win", type=float, default=4.0, help="window length, seconds")
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--keep", type=float, default=20.0, help="seconds kept after task onset")
    p.add_argument("--subject", type=str, default="S01")
    p.add_argument("--label", type=int, default=1)
    p.add_argument("--onset", type=int, default=0)
    p.add_argument("--offset", type=int, default=None)
    _add_seed(p)
    _add_print_config(p)
    p.set_defaults(func=cmd_preprocess)

    def run_parser(name, help_text, needs_subject=False):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--data", required=True, help="segment file")
        q.add_argument("--out", required=True)
        if needs_subject:
            q.add_argument("--test-subject", required=True)
        q.add_argument("--parallel-folds", type=int, default=1)
        q.add_argument("--quiet", action="store_true")
        _add_model_flags(q)
        _add_train_flags(q)
        _add_seed(q)
        _add_print_config(q)
        return q

    run_parser("train", "train one leave-one-subject-out fold", needs_subject=True
               ).set_defaults(func=cmd_train)
    run_parser("loso", "full leave-one-subject-out evaluation").set_defaults(func=cmd_loso)

    p = run_parser("ablate", "LOSO with one component disabled")
    p.add_argument("--variant", required=True,
                   choices=[a for a in ABLATIONS if a != "full"])
    p.set_defaults(func=cmd_ablate)

    p = run_parser("sweep", "LOSO across temporal patch lengths")
    p.add_argument("--lengths", type=str, default="10,20,30,40,50")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a segment file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subject", type=str, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    _add_print_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--mode", choices=("ops", "full", "both"), default="both")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="redirect artifacts to a new path")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.func(args)
    except PatchFormerError as exc:
        print(_canonical({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(_canonical({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
