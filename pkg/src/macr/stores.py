"""JSONL stores for intermediate artifacts (inferences, mediators, predictions)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .backend import EmbeddingVector
from .mediator import ClusterAssignment, MediatorSet
from .reasoner import DebateTranscript, Inference


def inference_record(inf: Inference) -> dict:
    return {
        "tree_id": inf.tree_id,
        "generation_index": inf.generation_index,
        "text": inf.text,
        "evidence_level": inf.evidence_level,
        "transcript": inf.source.as_dict(),
        "embedding": list(inf.embedding.values) if inf.embedding is not None else None,
    }


def inference_from_record(rec: dict) -> Inference:
    emb = rec.get("embedding")
    return Inference(
        rec["text"],
        rec["evidence_level"],
        DebateTranscript(**rec["transcript"]),
        EmbeddingVector(tuple(emb)) if emb is not None else None,
    )


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_inferences(path: str | Path) -> dict[str, list[Inference]]:
    """Inferences grouped by tree, each group ordered by generation index."""
    grouped: dict[str, list[Inference]] = {}
    for rec in read_jsonl(path):
        inf = inference_from_record(rec)
        grouped.setdefault(inf.tree_id, []).append(inf)
    for infs in grouped.values():
        infs.sort(key=lambda i: i.generation_index)
    return grouped


def mediator_record(mediators: MediatorSet, assignment: ClusterAssignment) -> dict:
    return {
        "tree_id": mediators.tree_id,
        "seed": assignment.seed,
        "K": mediators.k,
        "inertia": assignment.inertia,
        "iterations": assignment.iterations_run,
        "assignments": list(assignment.assignments),
        "sizes": list(mediators.cluster_sizes),
        "probabilities": [str(p) for p in mediators.probabilities],
        "representatives": [
            {"generation_index": r.generation_index, "text": r.text, "evidence_level": r.evidence_level}
            for r in mediators.representatives
        ],
    }
