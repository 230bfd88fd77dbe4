"""Evaluation metrics: rank correlations, tree decoding, and reports.

Correlation aggregates are computed per sequence length and then averaged
over the lengths 5 to 50 inclusive. Attachment score decodes a minimum
spanning tree from the predicted distance matrix and counts recovered gold
edges; root accuracy checks the argmin of the predicted depths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .probe import Pair, Probe, predict_depths, predict_distances
from .trees import TreeLabels

SPEARMAN_MIN_LEN = 5
SPEARMAN_MAX_LEN = 50

REPORT_COLUMNS = ("layer", "rank", "task", "metric", "value", "n_sequences")


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank positions."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.shape[0], dtype=np.float64)
    sorted_vals = arr[order]
    i = 0
    while i < arr.shape[0]:
        j = i
        while j + 1 < arr.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Rank correlation with tie-averaged ranks.

    Returns None (absent) when fewer than two points are given or either
    rank vector has zero variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        return None
    rx = average_ranks(x)
    ry = average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = np.sqrt((dx * dx).sum())
    sy = np.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        return None
    rho = float((dx * dy).sum() / (sx * sy))
    return min(1.0, max(-1.0, rho))


def length_binned_spearman(
    scores: Sequence[float | None],
    lengths: Sequence[int],
    min_len: int = SPEARMAN_MIN_LEN,
    max_len: int = SPEARMAN_MAX_LEN,
) -> float | None:
    """Mean over per-length mean scores for lengths in [min_len, max_len].

    Absent per-sequence scores are skipped; an empty range yields None.
    """
    if len(scores) != len(lengths):
        raise ValueError("scores and lengths differ in length")
    bins: dict[int, list[float]] = {}
    for score, n in zip(scores, lengths):
        if score is None or not min_len <= n <= max_len:
            continue
        bins.setdefault(int(n), []).append(float(score))
    if not bins:
        return None
    per_length = [sum(v) / len(v) for _, v in sorted(bins.items())]
    return sum(per_length) / len(per_length)


def decode_mst_edges(
    weights: np.ndarray, nodes: Sequence[int] | None = None
) -> set[tuple[int, int]]:
    """Minimum spanning tree of a complete weighted graph.

    Grows the tree greedily; among crossing edges of equal weight, the
    lexicographically smallest (i, j) pair wins, so the result is fully
    deterministic. The weight matrix is read as w[min(i,j), max(i,j)].
    """
    weights = np.asarray(weights, dtype=np.float64)
    if nodes is None:
        nodes = range(weights.shape[0])
    nodes = sorted(nodes)
    if len(nodes) < 2:
        return set()

    def key(u: int, v: int) -> tuple[float, int, int]:
        a, b = (u, v) if u < v else (v, u)
        return (float(weights[a, b]), a, b)

    start = nodes[0]
    best = {v: key(start, v) for v in nodes[1:]}
    edges: set[tuple[int, int]] = set()
    while best:
        chosen = min(best, key=best.__getitem__)
        _, a, b = best.pop(chosen)
        edges.add((a, b))
        for v in best:
            cand = key(chosen, v)
            if cand < best[v]:
                best[v] = cand
    return edges


def gold_edges(labels: TreeLabels) -> set[tuple[int, int]]:
    """Undirected gold edges: node pairs at tree distance one."""
    ii, jj = np.nonzero(np.triu(labels.distances == 1, k=1))
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def uuas_counts(
    pred_dist: np.ndarray,
    gold: TreeLabels,
    exclude: Sequence[int] = (),
) -> tuple[int, int]:
    """(recovered edges, gold edges), optionally dropping excluded tokens."""
    excluded = set(exclude)
    kept = [i for i in range(gold.n) if i not in excluded]
    gold_set = {(i, j) for i, j in gold_edges(gold) if i not in excluded and j not in excluded}
    if len(kept) < 2 or not gold_set:
        return (0, 0)
    pred_set = decode_mst_edges(np.asarray(pred_dist), kept)
    return (len(pred_set & gold_set), len(gold_set))


def uuas(
    pred_dist: np.ndarray, gold: TreeLabels, exclude: Sequence[int] = ()
) -> float | None:
    """Fraction of gold tree edges recovered by MST decoding."""
    correct, total = uuas_counts(pred_dist, gold, exclude)
    if total == 0:
        return None
    return correct / total


def root_accuracy(
    pred_depths: Sequence[np.ndarray], gold: Sequence[TreeLabels]
) -> float:
    """Fraction of sequences whose predicted-depth argmin is the gold root."""
    if len(pred_depths) != len(gold):
        raise ValueError("prediction and label counts differ")
    if not gold:
        raise ValueError("no sequences")
    correct = 0
    for pred, lab in zip(pred_depths, gold):
        if lab.root is None:
            raise ValueError(
                f"sequence {lab.id!r} has no root index; root accuracy only applies "
                "to textual labels"
            )
        if int(np.argmin(np.asarray(pred))) == lab.root:
            correct += 1
    return correct / len(gold)


def distance_sequence_score(
    pred: np.ndarray, gold: np.ndarray, mode: str = "rows"
) -> tuple[float | None, int]:
    """Per-sequence distance correlation and the count of undefined rows.

    "rows" averages one correlation per node row; "matrix" correlates the
    flattened upper triangles instead.
    """
    n = pred.shape[0]
    if mode == "matrix":
        iu = np.triu_indices(n, k=1)
        score = spearman(pred[iu], gold[iu]) if n >= 2 else None
        return score, (1 if score is None else 0)
    if mode != "rows":
        raise ValueError(f"unknown distance score mode {mode!r}")
    vals = []
    undefined = 0
    for i in range(n):
        rho = spearman(pred[i], gold[i])
        if rho is None:
            undefined += 1
        else:
            vals.append(rho)
    if not vals:
        return None, undefined
    return sum(vals) / len(vals), undefined


@dataclass
class EvalReport:
    """Per-sequence metric records plus their aggregates for one probe run."""

    task: str
    tag: int | str | None
    rank: int
    records: list[dict] = field(default_factory=list)
    aggregates: dict[str, float | None] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)

    def tsv_rows(self) -> list[dict]:
        rows = []
        for metric in sorted(self.aggregates):
            value = self.aggregates[metric]
            if value is None:
                continue
            rows.append(
                {
                    "layer": self.tag if self.tag is not None else "",
                    "rank": self.rank,
                    "task": self.task,
                    "metric": metric,
                    "value": float(value),
                    "n_sequences": self.counters.get(f"n_{metric}", len(self.records)),
                }
            )
        return rows


def evaluate_probe(
    probe: Probe,
    dataset: Sequence[Pair],
    tag: int | str | None = None,
    rank: int | None = None,
    excluded_tokens: Mapping[str, Sequence[int]] | None = None,
    dspr_mode: str = "rows",
) -> EvalReport:
    """Run a probe over a dataset and compute its task's metric suite."""
    if not dataset:
        raise ValueError("empty dataset")
    excluded_tokens = excluded_tokens or {}
    report = EvalReport(task=probe.task, tag=tag, rank=rank if rank is not None else probe.rank)
    zero_variance = 0

    if probe.task == "distance":
        scores: list[float | None] = []
        lengths: list[int] = []
        total_correct = 0
        total_edges = 0
        for labels, seq in dataset:
            pred = predict_distances(probe, seq)
            score, undefined = distance_sequence_score(
                pred, labels.distances.astype(np.float64), mode=dspr_mode
            )
            zero_variance += undefined
            correct, total = uuas_counts(pred, labels, excluded_tokens.get(labels.id, ()))
            scores.append(score)
            lengths.append(labels.n)
            total_correct += correct
            total_edges += total
            report.records.append(
                {
                    "id": labels.id,
                    "n": labels.n,
                    "dspr": score,
                    "uuas": (correct / total) if total else None,
                    "uuas_correct": correct,
                    "uuas_total": total,
                }
            )
        report.aggregates["dspr"] = length_binned_spearman(scores, lengths)
        report.aggregates["uuas"] = (total_correct / total_edges) if total_edges else None
        report.counters["n_dspr"] = sum(
            1
            for s, n in zip(scores, lengths)
            if s is not None and SPEARMAN_MIN_LEN <= n <= SPEARMAN_MAX_LEN
        )
        report.counters["n_uuas"] = sum(1 for r in report.records if r["uuas_total"] > 0)
    else:
        scores = []
        lengths = []
        root_hits: list[bool] = []
        have_roots = all(labels.root is not None for labels, _ in dataset)
        for labels, seq in dataset:
            pred = predict_depths(probe, seq)
            score = spearman(pred, labels.depths.astype(np.float64))
            if score is None:
                zero_variance += 1
            scores.append(score)
            lengths.append(labels.n)
            hit = None
            if have_roots:
                hit = int(np.argmin(pred)) == labels.root
                root_hits.append(hit)
            report.records.append(
                {"id": labels.id, "n": labels.n, "nspr": score, "root_correct": hit}
            )
        report.aggregates["nspr"] = length_binned_spearman(scores, lengths)
        report.aggregates["root_acc"] = (
            (sum(root_hits) / len(root_hits)) if have_roots else None
        )
        report.counters["n_nspr"] = sum(
            1
            for s, n in zip(scores, lengths)
            if s is not None and SPEARMAN_MIN_LEN <= n <= SPEARMAN_MAX_LEN
        )
        report.counters["n_root_acc"] = len(root_hits)

    report.counters["zero_variance"] = zero_variance
    return report


def format_tsv_value(value: float | int | str) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_tsv(rows: Iterable[dict], path: str | Path) -> None:
    """Write report rows as TSV; float values keep full round-trip precision."""
    lines = ["\t".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append("\t".join(format_tsv_value(row[c]) for c in REPORT_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report_tsv(path: str | Path) -> list[dict]:
    """Read rows written by write_report_tsv."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0].split("\t") != list(REPORT_COLUMNS):
        raise DataError(f"{path}: not a report TSV (bad header)")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(REPORT_COLUMNS):
            raise DataError(f"{path}:{lineno}: expected {len(REPORT_COLUMNS)} columns")
        layer: int | str
        try:
            layer = int(parts[0])
        except ValueError:
            layer = parts[0]
        rows.append(
            {
                "layer": layer,
                "rank": int(parts[1]),
                "task": parts[2],
                "metric": parts[3],
                "value": float(parts[4]),
                "n_sequences": int(parts[5]),
            }
        )
    return rows


def write_report_json(report: EvalReport, path: str | Path) -> None:
    """Full per-sequence detail for one evaluation run."""
    doc = {
        "task": report.task,
        "layer": report.tag,
        "rank": report.rank,
        "aggregates": report.aggregates,
        "counters": report.counters,
        "sequences": report.records,
    }
    Path(path).write_text(
        json.dumps(doc, separators=(",", ":"), sort_keys=True) + "\n", encoding="utf-8"
    )
