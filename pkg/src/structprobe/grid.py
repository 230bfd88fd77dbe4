"""Experiment grids: train and evaluate probes across layers and ranks.

A manifest (single JSON file) names the label files, one embedding file
triple per layer or baseline tag, the ranks, and the training config. All
referenced files are checked for existence and id/length agreement before
any cell trains. Cells run in a bounded worker pool; the aggregate TSV and
charts are written once, atomically, in a deterministic order.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .chart import render_line_chart
from .embed_io import read_embeddings, scan_embedding_headers
from .errors import StructProbeError, ValidationError
from .io_utils import atomic_write_text
from .metrics import (
    REPORT_COLUMNS,
    EvalReport,
    evaluate_probe,
    format_tsv_value,
    write_report_json,
)
from .probe import TrainConfig, pair_records, save_probe, train_probe
from .trees import TreeLabels, read_labels

log = logging.getLogger(__name__)

DEFAULT_CHART_METRICS = {
    "distance": ("dspr", "uuas"),
    "depth": ("nspr", "root_acc"),
}


@dataclass(frozen=True)
class GridCell:
    """One embedding source: a layer index or a baseline tag."""

    tag: int | str
    train_emb: Path
    val_emb: Path
    eval_emb: Path


@dataclass(frozen=True)
class ExperimentManifest:
    task: str
    train_labels: Path
    val_labels: Path
    eval_labels: Path
    cells: tuple[GridCell, ...]
    ranks: tuple[int, ...]
    train: TrainConfig
    out_dir: Path
    chart_metrics: tuple[str, ...] = field(default_factory=tuple)


def _as_tag(value) -> int | str:
    if isinstance(value, bool):
        raise ValidationError(f"bad layer tag {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value:
        return value
    raise ValidationError(f"bad layer tag {value!r}")


def load_manifest(path: str | Path, out_dir_override: str | None = None) -> ExperimentManifest:
    """Parse and schema-check a manifest file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read manifest: {exc}") from exc
    try:
        task = doc["task"]
        if task not in ("distance", "depth"):
            raise ValidationError(f"{path}: unknown task {task!r}")
        cells = []
        entries = list(doc["layers"]) + list(doc.get("baselines", []))
        for entry in entries:
            cells.append(
                GridCell(
                    tag=_as_tag(entry["tag"]),
                    train_emb=Path(entry["train_emb"]),
                    val_emb=Path(entry["val_emb"]),
                    eval_emb=Path(entry["eval_emb"]),
                )
            )
        ranks = tuple(int(r) for r in doc.get("ranks", [128]))
        train_doc = dict(doc.get("train", {}))
        cfg = TrainConfig(**train_doc)
        out_dir = Path(out_dir_override or doc["out_dir"])
        chart_metrics = tuple(doc.get("chart_metrics", DEFAULT_CHART_METRICS[task]))
        manifest = ExperimentManifest(
            task=task,
            train_labels=Path(doc["train_labels"]),
            val_labels=Path(doc["val_labels"]),
            eval_labels=Path(doc["eval_labels"]),
            cells=tuple(cells),
            ranks=ranks,
            train=cfg,
            out_dir=out_dir,
            chart_metrics=chart_metrics,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: bad manifest: {exc}") from exc
    if not manifest.cells:
        raise ValidationError(f"{path}: empty layer list")
    if not manifest.ranks:
        raise ValidationError(f"{path}: empty rank list")
    tags = [c.tag for c in manifest.cells]
    if len(set(tags)) != len(tags):
        raise ValidationError(f"{path}: duplicate layer tags {tags}")
    return manifest


def _check_pairing(labels: Sequence[TreeLabels], emb_path: Path) -> None:
    headers = {rec[0]: rec for rec in scan_embedding_headers(emb_path)}
    for lab in labels:
        rec = headers.get(lab.id)
        if rec is None:
            raise ValidationError(f"{emb_path}: no embeddings for sequence {lab.id!r}")
        if rec[2] != lab.n:
            raise ValidationError(
                f"{emb_path}: sequence {lab.id!r} has {rec[2]} rows but {lab.n} "
                "labelled nodes"
            )


def validate_manifest_data(manifest: ExperimentManifest) -> dict[str, list[TreeLabels]]:
    """Check every file and every (labels, embeddings) pairing up front."""
    split_labels = {}
    for name, lpath in (
        ("train", manifest.train_labels),
        ("val", manifest.val_labels),
        ("eval", manifest.eval_labels),
    ):
        if not lpath.exists():
            raise ValidationError(f"missing labels file {lpath}")
        split_labels[name] = read_labels(lpath)
        if not split_labels[name]:
            raise ValidationError(f"{lpath}: no label records")
    for cell in manifest.cells:
        for split, epath in (
            ("train", cell.train_emb),
            ("val", cell.val_emb),
            ("eval", cell.eval_emb),
        ):
            if not epath.exists():
                raise ValidationError(f"layer {cell.tag}: missing embeddings file {epath}")
            _check_pairing(split_labels[split], epath)
    return split_labels


def _tag_sort_key(tag: int | str):
    return (0, tag, "") if isinstance(tag, int) else (1, 0, tag)


def _cell_name(tag: int | str, rank: int) -> str:
    return f"layer{tag}_rank{rank}"


def run_layer_grid(
    manifest: ExperimentManifest, jobs: int = 1
) -> tuple[list[EvalReport], list[tuple[str, str]]]:
    """Train and evaluate every (layer, rank) cell; emit the aggregate table.

    Failed cells are recorded and skipped. Raises only if every cell fails.
    Returns the successful reports and the (cell, error) failures.
    """
    split_labels = validate_manifest_data(manifest)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)

    work = [(cell, rank) for cell in manifest.cells for rank in manifest.ranks]

    def run_cell(cell: GridCell, rank: int) -> EvalReport:
        train_pairs = pair_records(split_labels["train"], read_embeddings(cell.train_emb))
        val_pairs = pair_records(split_labels["val"], read_embeddings(cell.val_emb))
        eval_pairs = pair_records(split_labels["eval"], read_embeddings(cell.eval_emb))
        cfg = TrainConfig(
            batch_size=manifest.train.batch_size,
            max_epochs=manifest.train.max_epochs,
            patience=manifest.train.patience,
            rank=rank,
            lr=manifest.train.lr,
            optimizer=manifest.train.optimizer,
            seed=manifest.train.seed,
        )
        probe = train_probe(manifest.task, train_pairs, val_pairs, cfg, layer=cell.tag)
        name = _cell_name(cell.tag, rank)
        save_probe(probe, manifest.out_dir / f"probe_{name}.json")
        report = evaluate_probe(probe, eval_pairs, tag=cell.tag, rank=rank)
        write_report_json(report, manifest.out_dir / f"report_{name}.json")
        return report

    results: dict[tuple[int, int], EvalReport] = {}
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {
            pool.submit(run_cell, cell, rank): (i, cell, rank)
            for i, (cell, rank) in enumerate(work)
        }
        for future, (i, cell, rank) in futures.items():
            name = _cell_name(cell.tag, rank)
            try:
                results[(i, rank)] = future.result()
            except Exception as exc:
                log.error("cell %s failed: %s", name, exc)
                failures.append((name, str(exc)))

    if not results:
        raise StructProbeError(
            "all grid cells failed: " + "; ".join(f"{n}: {e}" for n, e in failures)
        )

    reports = [results[key] for key in sorted(results)]
    rows = [row for report in reports for row in report.tsv_rows()]
    rows.sort(key=lambda r: (_tag_sort_key(r["layer"]), r["rank"], r["metric"]))
    lines = ["\t".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append("\t".join(format_tsv_value(row[c]) for c in REPORT_COLUMNS))
    atomic_write_text(manifest.out_dir / "report.tsv", "\n".join(lines) + "\n")

    for metric in manifest.chart_metrics:
        present = [r for r in rows if r["metric"] == metric]
        if not present:
            log.warning("no rows for chart metric %s; skipping chart", metric)
            continue
        svg = render_line_chart(present, metric)
        atomic_write_text(manifest.out_dir / f"chart_{metric}.svg", svg)

    return reports, failures
