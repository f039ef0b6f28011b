"""Conversation trees: data model, JSONL ingestion, prompt rendering and fold splits.

Record format (one JSON object per line)::

    {"id": "t1", "post": "...", "label": "L2",
     "comments": [{"id": "c1", "parent_id": null, "text": "...", "author": "a7"}]}

``label`` is optional and names an entry of the label set. ``parent_id`` null
attaches the comment to the post. ``author`` is an optional opaque string.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .errors import RecordError, ValidationError

DEFAULT_LABELS = ("L0", "L1", "L2", "L3")
POST_MARKER = "[POST]"
COMMENT_MARKER = "[COMMENT]"
TRUNCATION_MARKER = "[truncated]"
INDENT = "  "


@dataclass(frozen=True)
class RiskLabelSet:
    """Ordered risk levels, index 0 is the lowest risk."""

    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValidationError("labels", "need at least two risk levels")
        if any(not isinstance(lab, str) or not lab.strip() for lab in labels):
            raise ValidationError("labels", "label names must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise ValidationError("labels", f"duplicate label names in {labels}")

    @classmethod
    def parse(cls, text: str) -> "RiskLabelSet":
        return cls(tuple(part.strip() for part in text.split(",")))

    @property
    def count(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        return self.labels.index(name)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> str:
        return self.labels[i]


@dataclass(frozen=True)
class CommentNode:
    id: str
    text: str
    depth: int
    author_ref: str = ""
    children: tuple["CommentNode", ...] = ()


@dataclass(frozen=True)
class ConversationTree:
    id: str
    post_text: str
    root_comments: tuple[CommentNode, ...] = ()
    gold_label: int | None = None
    node_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.post_text.strip():
            raise ValidationError("post", f"tree {self.id!r} has empty post text")
        object.__setattr__(self, "root_comments", tuple(self.root_comments))
        object.__setattr__(self, "node_count", 1 + sum(1 for _ in self.iter_comments()))

    def iter_comments(self) -> Iterator[tuple[CommentNode, str | None]]:
        """Depth-first pre-order over comments, yielding (node, parent id)."""
        stack: list[tuple[CommentNode, str | None]] = [(c, None) for c in reversed(self.root_comments)]
        while stack:
            node, parent = stack.pop()
            yield node, parent
            stack.extend((c, node.id) for c in reversed(node.children))

    @property
    def max_depth(self) -> int:
        return max((node.depth for node, _ in self.iter_comments()), default=0)


@dataclass(frozen=True)
class Dataset:
    trees: tuple[ConversationTree, ...]
    label_set: RiskLabelSet = field(default_factory=RiskLabelSet)
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        seen = set()
        for tree in self.trees:
            if tree.id in seen:
                raise ValidationError("id", f"duplicate tree id {tree.id!r}")
            seen.add(tree.id)
            if tree.gold_label is not None and not 0 <= tree.gold_label < len(self.label_set):
                raise ValidationError("label", f"tree {tree.id!r} label index {tree.gold_label} out of range")

    def __len__(self) -> int:
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)

    def get(self, tree_id: str) -> ConversationTree:
        for tree in self.trees:
            if tree.id == tree_id:
                return tree
        raise KeyError(tree_id)

    def subset(self, trees: Sequence[ConversationTree], name: str | None = None) -> "Dataset":
        return Dataset(tuple(trees), self.label_set, name or self.name)


# ---------------------------------------------------------------- ingestion


def _require_str(record: dict, key: str, line: int, *, allow_empty: bool = False) -> str:
    value = record.get(key)
    if not isinstance(value, str):
        raise RecordError(line, key, f"expected string, got {type(value).__name__}")
    if not allow_empty and not value.strip():
        raise RecordError(line, key, "must be non-empty")
    return value


def tree_from_record(record: dict, label_set: RiskLabelSet, line: int = 0) -> ConversationTree:
    if not isinstance(record, dict):
        raise RecordError(line, "record", "expected a JSON object")
    tree_id = _require_str(record, "id", line)
    post = _require_str(record, "post", line)

    gold = None
    if record.get("label") is not None:
        name = record["label"]
        if name not in label_set.labels:
            raise RecordError(line, "label", f"unknown label name {name!r}; expected one of {list(label_set.labels)}")
        gold = label_set.index(name)

    raw_comments = record.get("comments", [])
    if not isinstance(raw_comments, list):
        raise RecordError(line, "comments", "expected a list")

    entries: dict[str, dict] = {}
    order: list[str] = []
    for j, c in enumerate(raw_comments):
        if not isinstance(c, dict):
            raise RecordError(line, f"comments[{j}]", "expected an object")
        cid = _require_str(c, "id", line)
        if cid in entries:
            raise RecordError(line, f"comments[{j}].id", f"duplicate comment id {cid!r}")
        if cid == tree_id:
            raise RecordError(line, f"comments[{j}].id", "comment id collides with tree id")
        parent = c.get("parent_id")
        if parent is not None and not isinstance(parent, str):
            raise RecordError(line, f"comments[{j}].parent_id", "expected string or null")
        if parent == cid:
            raise RecordError(line, f"comments[{j}].parent_id", f"cycle: comment {cid!r} is its own parent")
        text = _require_str(c, "text", line, allow_empty=True)
        author = c.get("author", "") or ""
        if not isinstance(author, str):
            raise RecordError(line, f"comments[{j}].author", "expected string")
        entries[cid] = {"parent": parent, "text": text, "author": author}
        order.append(cid)

    children: dict[str | None, list[str]] = {}
    for cid in order:
        parent = entries[cid]["parent"]
        if parent is not None and parent not in entries:
            raise RecordError(line, "comments.parent_id", f"comment {cid!r} references unknown parent {parent!r}")
        children.setdefault(parent, []).append(cid)

    reached: set[str] = set()

    def build(cid: str, depth: int) -> CommentNode:
        reached.add(cid)
        entry = entries[cid]
        kids = tuple(build(k, depth + 1) for k in children.get(cid, ()))
        return CommentNode(cid, entry["text"], depth, entry["author"], kids)

    # comments unreachable from the post sit on a parent cycle
    roots = tuple(build(cid, 1) for cid in children.get(None, ()))
    if len(reached) != len(entries):
        stuck = sorted(set(entries) - reached)
        raise RecordError(line, "comments.parent_id", f"cycle among comments {stuck}")
    return ConversationTree(tree_id, post, roots, gold)


def tree_to_record(tree: ConversationTree, label_set: RiskLabelSet) -> dict:
    record: dict = {"id": tree.id, "post": tree.post_text}
    if tree.gold_label is not None:
        record["label"] = label_set[tree.gold_label]
    comments = []
    for node, parent in tree.iter_comments():
        item = {"id": node.id, "parent_id": parent, "text": node.text}
        if node.author_ref:
            item["author"] = node.author_ref
        comments.append(item)
    record["comments"] = comments
    return record


def parse_dataset(path: str | Path, label_set: RiskLabelSet | None = None, name: str | None = None) -> Dataset:
    """Read a JSONL dataset file; records keep their line order."""
    label_set = label_set or RiskLabelSet()
    path = Path(path)
    trees = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise RecordError(lineno, "record", f"invalid JSON ({exc.msg})") from None
            tree = tree_from_record(record, label_set, lineno)
            if tree.id in seen:
                raise RecordError(lineno, "id", f"duplicate tree id {tree.id!r} (first on line {seen[tree.id]})")
            seen[tree.id] = lineno
            trees.append(tree)
    return Dataset(tuple(trees), label_set, name or path.stem)


def dump_dataset(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tree in dataset.trees:
            fh.write(json.dumps(tree_to_record(tree, dataset.label_set), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------- rendering


def _admitted_ids(tree: ConversationTree, max_depth: int, max_nodes: int) -> set[str]:
    # the post takes one slot of the node budget
    budget = max_nodes - 1
    admitted: set[str] = set()
    queue = deque(tree.root_comments)
    while queue and len(admitted) < budget:
        node = queue.popleft()
        if node.depth > max_depth:
            continue
        admitted.add(node.id)
        queue.extend(node.children)
    return admitted


def _block(prefix: str, text: str, indent: str) -> str:
    lines = text.splitlines() or [""]
    head = f"{indent}{prefix} {lines[0]}".rstrip()
    rest = [f"{indent}{' ' * (len(prefix) + 1)}{ln}".rstrip() for ln in lines[1:]]
    return "\n".join([head, *rest])


def render_tree(tree: ConversationTree, max_depth: int = 6, max_nodes: int = 60) -> str:
    """Render a tree as indented text for prompts and retrieval embeddings.

    Nodes are admitted breadth-first until ``max_nodes`` (post included) so
    early top-level replies survive truncation, then printed depth-first.
    A final ``[truncated]`` line appears whenever any comment was left out.
    """
    if max_depth < 1 or max_nodes < 1:
        raise ValueError("max_depth and max_nodes must be >= 1")
    admitted = _admitted_ids(tree, max_depth, max_nodes)
    out = [_block(POST_MARKER, tree.post_text, "")]
    for node, _ in tree.iter_comments():
        if node.id not in admitted:
            continue
        marker = f"{COMMENT_MARKER[:-1]} {node.author_ref}]" if node.author_ref else COMMENT_MARKER
        out.append(_block(marker, node.text, INDENT * node.depth))
    if len(admitted) < tree.node_count - 1:
        out.append(TRUNCATION_MARKER)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- folds


def kfold_split(dataset: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold split; folds differ in size by at most one."""
    if k < 2:
        raise ValidationError("k", "need at least two folds")
    unlabeled = [t.id for t in dataset.trees if t.gold_label is None]
    if unlabeled:
        raise ValidationError("label", f"fold splits need labels; unlabeled trees: {unlabeled[:5]}")
    if len(dataset) < k:
        raise ValidationError("k", f"{len(dataset)} trees cannot fill {k} folds")

    rng = random.Random(seed)
    by_label: dict[int, list[int]] = {}
    for i, tree in enumerate(dataset.trees):
        by_label.setdefault(tree.gold_label, []).append(i)
    dealt: list[int] = []
    for label in sorted(by_label):
        members = by_label[label]
        rng.shuffle(members)
        dealt.extend(members)

    fold_of = {idx: pos % k for pos, idx in enumerate(dealt)}
    folds = []
    for f in range(k):
        test = [t for i, t in enumerate(dataset.trees) if fold_of[i] == f]
        train = [t for i, t in enumerate(dataset.trees) if fold_of[i] != f]
        folds.append((dataset.subset(train, f"{dataset.name}-train{f}"), dataset.subset(test, f"{dataset.name}-test{f}")))
    return folds
