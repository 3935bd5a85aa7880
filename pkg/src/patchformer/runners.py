"""Experiment runners: full LOSO evaluation, ablations, patch-length sweep."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ABLATIONS, ModelConfig
from .data import SegmentSet, loso_split
from .model import build
from .rng import Rng
from .train import TrainConfig, evaluate_segments, train

METRICS = ("acc", "auc", "macro_f1")


@dataclass
class SubjectResult:
    subject: str
    acc: float
    auc: float
    macro_f1: float
    best_epoch: int
    n_test: int


@dataclass
class ExperimentReport:
    """Per-subject metrics plus their mean and population std over subjects."""

    label: str
    rows: list
    aggregate: dict
    config_fingerprint: str
    wall_clock_s: float
    metric_note: str = "aggregate std is the population std over subjects"
    histories: dict = field(default_factory=dict)

    @staticmethod
    def aggregate_rows(rows: list) -> dict:
        out = {}
        for metric in METRICS:
            values = np.asarray([getattr(r, metric) for r in rows], dtype=np.float64)
            out[metric] = {"mean": float(values.mean()), "std": float(values.std())}
        return out

    def summary(self) -> str:
        agg = self.aggregate
        return (
            f"[{self.label}] "
            f"ACC {agg['acc']['mean']:.2f}+-{agg['acc']['std']:.2f}%  "
            f"AUC {agg['auc']['mean']:.3f}+-{agg['auc']['std']:.3f}  "
            f"F1-macro {agg['macro_f1']['mean']:.2f}+-{agg['macro_f1']['std']:.2f}%"
        )

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "format_version": 1,
            "label": self.label,
            "rows": [asdict(r) for r in self.rows],
            "aggregate": self.aggregate,
            "config_fingerprint": self.config_fingerprint,
            "metric_note": self.metric_note,
            "metric_definitions": {
                "acc": "percent correctly classified",
                "auc": "area under the ROC curve of class-1 probabilities",
                "macro_f1": "unweighted mean of per-class F1, percent",
            },
            "histories": self.histories,
        }
        if include_timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization (timing excluded), for reproducibility checks."""
        return json.dumps(self.to_dict(include_timing=False), sort_keys=True,
                          separators=(",", ":")).encode()

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject", "acc_percent", "auc", "macro_f1_percent",
                             "best_epoch", "n_test"])
            for r in self.rows:
                writer.writerow([r.subject, f"{r.acc:.4f}", f"{r.auc:.6f}",
                                 f"{r.macro_f1:.4f}", r.best_epoch, r.n_test])
            agg = self.aggregate
            writer.writerow(["mean", f"{agg['acc']['mean']:.4f}", f"{agg['auc']['mean']:.6f}",
                             f"{agg['macro_f1']['mean']:.4f}", "", ""])
            writer.writerow(["std", f"{agg['acc']['std']:.4f}", f"{agg['auc']['std']:.6f}",
                             f"{agg['macro_f1']['std']:.4f}", "", ""])


def config_fingerprint(mc: ModelConfig, tc: TrainConfig) -> str:
    blob = json.dumps({"model": mc.to_dict(), "train": tc.to_dict()},
                      sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_fold(args):
    """One LOSO fold, self-contained so folds can run in worker processes."""
    ds, mc, tc, subject, checkpoint_path = args
    try:
        root = Rng(tc.seed)
        fold = loso_split(ds, subject, val_frac=0.2, rng=root.spawn(f"split:{subject}"))
        model = build(mc, root.spawn(f"init:{subject}"))
        best_state, best_epoch, history = train(model, fold, tc, root.spawn(f"train:{subject}"))
        model.load_state(best_state)
        ev = evaluate_segments(model, fold.test, tc.batch_size)
        if checkpoint_path is not None:
            from .checkpoint import save_model

            save_model(model, checkpoint_path)
    except Exception as exc:
        raise type(exc)(f"fold for subject {subject!r} failed: {exc}") from exc
    row = SubjectResult(
        subject=subject,
        acc=ev["acc"],
        auc=ev["auc"],
        macro_f1=ev["macro_f1"],
        best_epoch=best_epoch,
        n_test=fold.test.n,
    )
    return row, history


def run_loso(ds: SegmentSet, mc: ModelConfig, tc: TrainConfig,
             label: str | None = None, parallel_folds: int = 1,
             out_dir=None, log_fn=None) -> ExperimentReport:
    """Train and test once per subject; aggregate mean +- std over subjects."""
    mc.validate()
    tc.validate()
    subjects = ds.subjects
    if len(subjects) < 2:
        raise ValueError("LOSO needs at least 2 subjects")

    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def ckpt_path(subject):
        return None if ckpt_dir is None else ckpt_dir / f"{subject}.ckpt"

    started = time.perf_counter()
    tasks = [(ds, mc, tc, s, ckpt_path(s)) for s in subjects]
    if parallel_folds > 1:
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = []
        for task in tasks:
            row, history = _run_fold(task)
            if log_fn is not None:
                log_fn({"subject": row.subject, "acc": row.acc, "auc": row.auc,
                        "macro_f1": row.macro_f1, "best_epoch": row.best_epoch})
            results.append((row, history))
    wall = time.perf_counter() - started

    rows = [r for r, _ in results]  # tasks are in sorted-subject order already
    return ExperimentReport(
        label=label if label is not None else mc.ablation,
        rows=rows,
        aggregate=ExperimentReport.aggregate_rows(rows),
        config_fingerprint=config_fingerprint(mc, tc),
        wall_clock_s=wall,
        histories={r.subject: h for (r, h) in results},
    )


def ablate(ds: SegmentSet, mc: ModelConfig, tc: TrainConfig, variant: str,
           **run_kwargs) -> ExperimentReport:
    """Run LOSO with one architecture component disabled."""
    if variant not in ABLATIONS or variant == "full":
        raise ValueError(f"unknown ablation variant {variant!r}; "
                         f"expected one of {[a for a in ABLATIONS if a != 'full']}")
    return run_loso(ds, replace(mc, ablation=variant), tc, label=variant, **run_kwargs)


def sweep_patch_length(ds: SegmentSet, mc: ModelConfig, tc: TrainConfig,
                       lengths=(10, 20, 30, 40, 50), **run_kwargs) -> list:
    """One LOSO report per temporal patch length."""
    lengths = list(lengths)
    for l_t in lengths:
        if not 1 <= l_t <= mc.t_spatial:
            raise ValueError(
                f"patch length {l_t} is invalid: post-CNN time length is {mc.t_spatial}"
            )
    return [
        run_loso(ds, replace(mc, l_t=l_t), tc, label=f"l_t={l_t}", **run_kwargs)
        for l_t in lengths
    ]


def sweep_table(reports: list) -> str:
    """Render a sweep as CSV text: one row per patch length, three metric pairs."""
    lines = ["patch_length,acc_mean,acc_std,auc_mean,auc_std,macro_f1_mean,macro_f1_std"]
    for rep in reports:
        agg = rep.aggregate
        length = rep.label.split("=", 1)[1] if "=" in rep.label else rep.label
        lines.append(
            f"{length},{agg['acc']['mean']:.4f},{agg['acc']['std']:.4f},"
            f"{agg['auc']['mean']:.6f},{agg['auc']['std']:.6f},"
            f"{agg['macro_f1']['mean']:.4f},{agg['macro_f1']['std']:.4f}"
        )
    return "\n".join(lines) + "\n"
