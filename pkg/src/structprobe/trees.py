"""Dependency trees, gold tree labels, and their JSONL serialization.

Trees are stored as per-token head arrays. The root token's head is the
sentinel ``ROOT`` (-1), never a token index, so index 0 stays unambiguous.
Gold labels are the all-pairs path-length matrix (breadth-first search from
every node) and the per-node depth vector (root depth 0, +1 per level).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

ROOT = -1


class ConllError(DataError):
    """Malformed or structurally invalid CoNLL input."""


@dataclass(frozen=True, eq=False)
class DepTree:
    """A rooted dependency tree over the tokens of one sentence."""

    tokens: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...] | None = None
    sent_id: str | None = None
    root: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if self.deprels is not None:
            object.__setattr__(self, "deprels", tuple(self.deprels))
        n = len(self.tokens)
        if n == 0:
            raise ValueError("a tree needs at least one token")
        if len(self.heads) != n:
            raise ValueError(f"{n} tokens but {len(self.heads)} heads")
        if self.deprels is not None and len(self.deprels) != n:
            raise ValueError(f"{n} tokens but {len(self.deprels)} deprels")
        roots = [i for i, h in enumerate(self.heads) if h == ROOT]
        if len(roots) == 0:
            raise ValueError("no root token (no head equals ROOT)")
        if len(roots) > 1:
            raise ValueError(f"multiple root tokens at indices {roots}")
        for i, h in enumerate(self.heads):
            if h != ROOT and not 0 <= h < n:
                raise ValueError(f"token {i} has out-of-range head {h}")
        object.__setattr__(self, "root", roots[0])
        if self._count_reachable() != n:
            raise ValueError("head relation is cyclic or disconnected")

    @property
    def n(self) -> int:
        return len(self.tokens)

    def children(self) -> list[list[int]]:
        """Child index lists, ordered by token position."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, h in enumerate(self.heads):
            if h != ROOT:
                out[h].append(i)
        return out

    def _count_reachable(self) -> int:
        children = self.children()
        seen = {self.root}
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            for child in children[node]:
                if child in seen:
                    return -1
                seen.add(child)
                queue.append(child)
        return len(seen)


@dataclass(frozen=True, eq=False)
class TreeLabels:
    """Gold path-length matrix and depth vector for one node sequence.

    ``root`` is the index with depth zero for textual sequences and None
    for visual sequences, where the root is always sequence position 0.
    """

    id: str
    distances: np.ndarray
    depths: np.ndarray
    root: int | None

    def __post_init__(self):
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=np.int64))
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=np.int64))
        n = self.depths.shape[0]
        if self.distances.shape != (n, n):
            raise ValueError(
                f"distances shape {self.distances.shape} does not match {n} depths"
            )
        if np.any(np.diag(self.distances) != 0):
            raise ValueError("distance matrix has a nonzero diagonal")
        if not np.array_equal(self.distances, self.distances.T):
            raise ValueError("distance matrix is not symmetric")
        if self.root is not None:
            if not 0 <= self.root < n:
                raise ValueError(f"root index {self.root} out of range for n={n}")
            if self.depths[self.root] != 0:
                raise ValueError("root does not have depth zero")

    @property
    def n(self) -> int:
        return int(self.depths.shape[0])


def _neighbor_lists(heads: Sequence[int]) -> list[list[int]]:
    """Undirected adjacency from a head array with a single ROOT sentinel."""
    n = len(heads)
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, h in enumerate(heads):
        if h == ROOT:
            continue
        adj[i].append(h)
        adj[h].append(i)
    return adj


def all_pairs_path_lengths(heads: Sequence[int]) -> np.ndarray:
    """Edge counts between every node pair, by BFS from each node."""
    n = len(heads)
    adj = _neighbor_lists(heads)
    dist = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        row = dist[src]
        row[src] = 0
        queue = deque([src])
        while queue:
            node = queue.popleft()
            for nxt in adj[node]:
                if row[nxt] < 0:
                    row[nxt] = row[node] + 1
                    queue.append(nxt)
    if np.any(dist < 0):
        raise ValueError("node array is not connected")
    return dist


def tree_distances(tree: DepTree) -> np.ndarray:
    """n-by-n matrix of undirected path lengths between tokens."""
    return all_pairs_path_lengths(tree.heads)


def tree_depths(tree: DepTree) -> np.ndarray:
    """Per-token edge count to the root; the root itself gets 0."""
    depths = np.full(tree.n, -1, dtype=np.int64)
    depths[tree.root] = 0
    children = tree.children()
    queue = deque([tree.root])
    while queue:
        node = queue.popleft()
        for child in children[node]:
            depths[child] = depths[node] + 1
            queue.append(child)
    return depths


def tree_labels(tree: DepTree, seq_id: str) -> TreeLabels:
    """Bundle gold distances and depths for one sentence."""
    return TreeLabels(
        id=seq_id,
        distances=tree_distances(tree),
        depths=tree_depths(tree),
        root=tree.root,
    )


def parse_conllu(text: str) -> list[DepTree]:
    """Parse CoNLL-formatted text into one DepTree per sentence block.

    Two column layouts are accepted per line: the full CoNLL-U/CoNLL-X
    layout (>= 8 columns, HEAD and DEPREL in columns 7-8) and a compact
    4-column layout (ID FORM HEAD DEPREL). Columns beyond the required
    ones are ignored. Multiword-token lines (ID "i-j") and empty-node
    lines (ID "i.j") are skipped; HEAD 0 marks the root.
    """
    trees: list[DepTree] = []
    block: list[tuple[int, str, int, str]] = []
    sent_id: str | None = None
    pending_id = None

    def flush(end_line: int) -> None:
        nonlocal block, pending_id
        if not block:
            return
        ids = [row[0] for row in block]
        if ids != list(range(1, len(block) + 1)):
            raise ConllError(
                f"sentence ending at line {end_line}: token ids {ids} are not 1..n"
            )
        n = len(block)
        heads = []
        for tid, _, head, _ in block:
            if head == 0:
                heads.append(ROOT)
            elif 1 <= head <= n:
                heads.append(head - 1)
            else:
                raise ConllError(
                    f"sentence ending at line {end_line}: token {tid} has head {head} "
                    f"outside 0..{n}"
                )
        label = pending_id if pending_id is not None else f"#{len(trees)}"
        try:
            tree = DepTree(
                tokens=tuple(row[1] for row in block),
                heads=tuple(heads),
                deprels=tuple(row[3] for row in block),
                sent_id=pending_id,
            )
        except ValueError as exc:
            raise ConllError(f"sentence {label} (ending at line {end_line}): {exc}") from exc
        trees.append(tree)
        block = []
        pending_id = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush(lineno)
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("sent_id"):
                _, _, value = body.partition("=")
                pending_id = value.strip() or None
            continue
        cols = line.split("\t") if "\t" in line else line.split()
        if len(cols) < 4:
            raise ConllError(f"line {lineno}: expected at least 4 columns, got {len(cols)}")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue
        head_col, deprel_col = (6, 7) if len(cols) >= 8 else (2, 3)
        try:
            parsed_id = int(tok_id)
            head = int(cols[head_col])
        except ValueError as exc:
            raise ConllError(f"line {lineno}: non-integer ID or HEAD field: {exc}") from exc
        block.append((parsed_id, cols[1], head, cols[deprel_col]))
    flush(lineno if text else 0)
    return trees


def read_conllu(path: str | Path) -> list[DepTree]:
    """Parse a UTF-8 CoNLL file."""
    return parse_conllu(Path(path).read_text(encoding="utf-8"))


def write_labels(labels: Iterable[TreeLabels], path: str | Path) -> None:
    """Write gold labels as JSON Lines, one record per sequence."""
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(labels_record(lab) + "\n")


def labels_record(lab: TreeLabels, extra: dict | None = None) -> str:
    """Serialize one TreeLabels to its JSONL line (without newline)."""
    rec: dict = {
        "id": lab.id,
        "n": lab.n,
        "depths": lab.depths.tolist(),
        "distances": lab.distances.tolist(),
    }
    if lab.root is not None:
        rec["root"] = int(lab.root)
    if extra:
        rec.update(extra)
    return json.dumps(rec, separators=(",", ":"))


def read_labels(path: str | Path) -> list[TreeLabels]:
    """Read a labels JSONL file; extra record keys are ignored."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                lab = TreeLabels(
                    id=str(rec["id"]),
                    distances=rec["distances"],
                    depths=rec["depths"],
                    root=rec.get("root"),
                )
                if lab.n != int(rec["n"]):
                    raise ValueError(f"declared n={rec['n']} but found {lab.n} depths")
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad labels record: {exc}") from exc
            out.append(lab)
    return out
