"""Bias-aware decision stage.

Each mediator representative is judged ``T`` times against one retrieved
demonstration per risk level; the vote frequencies are mixed with the
cluster probabilities into the final risk distribution.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .backend import Backend, ChatRequest, EmbeddingVector, cosine_similarity
from .errors import CoverageError, LabelParseError, MacrError, StageError, ValidationError
from .mediator import MediatorSet, build_mediators
from .reasoner import Inference, generate_inferences
from .seeding import derive_seed
from .treemodel import ConversationTree, Dataset, RiskLabelSet, render_tree

log = logging.getLogger(__name__)

STRICT_SUFFIX = "\nYour previous answer could not be read. Reply with only the label name, nothing else."
MIXTURE_SLACK = 1e-9


@dataclass(frozen=True)
class RiskDistribution:
    probs: tuple[Fraction, ...]

    def __post_init__(self):
        probs = tuple(p if isinstance(p, Fraction) else Fraction(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if any(p < 0 for p in probs):
            raise ValueError(f"negative probability in {self.as_floats()}")
        if abs(float(sum(probs)) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {float(sum(probs))}, not 1")

    def __len__(self) -> int:
        return len(self.probs)

    def as_floats(self) -> list[float]:
        return [float(p) for p in self.probs]

    @classmethod
    def one_hot(cls, index: int, size: int) -> "RiskDistribution":
        return cls(tuple(Fraction(int(i == index)) for i in range(size)))


@dataclass(frozen=True)
class DemonstrationSet:
    items: tuple[tuple[str, int], ...]  # (rendering, label index), ordered by level
    source_ids: tuple[str, ...]

    def render(self, label_set: RiskLabelSet) -> str:
        blocks = [f"### Example {i + 1} (label: {label_set[lab]})\n{text.rstrip()}" for i, (text, lab) in enumerate(self.items)]
        return "\n\n".join(blocks)


@dataclass(frozen=True)
class VoteRecord:
    mediator_index: int
    votes: tuple[int, ...]
    per_call_raw: tuple[str, ...]


@dataclass
class Prediction:
    tree_id: str
    label: int
    distribution: RiskDistribution
    provenance: dict = field(default_factory=dict)

    def to_record(self, label_set: RiskLabelSet) -> dict:
        return {
            "tree_id": self.tree_id,
            "label": label_set[self.label],
            "probs": self.distribution.as_floats(),
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------- retrieval


class PoolIndex:
    """Labeled pool trees with embeddings of their prompt renderings."""

    def __init__(self, dataset: Dataset, embeddings: dict[str, EmbeddingVector], renderings: dict[str, str]):
        self.dataset = dataset
        self.embeddings = embeddings
        self.renderings = renderings

    @classmethod
    def build(cls, dataset: Dataset, backend: Backend, max_depth: int = 6, max_nodes: int = 60) -> "PoolIndex":
        labeled = [t for t in dataset.trees if t.gold_label is not None]
        renderings = {t.id: render_tree(t, max_depth, max_nodes) for t in labeled}
        embeddings = {tid: backend.embed(text) for tid, text in renderings.items()}
        return cls(dataset.subset(labeled), embeddings, renderings)

    @property
    def ids(self) -> set[str]:
        return set(self.renderings)


def retrieve_demonstrations(query: ConversationTree, pool: PoolIndex, query_embedding: EmbeddingVector) -> DemonstrationSet:
    """For every level, the most cosine-similar pool tree other than the query; ties by smallest id."""
    label_set = pool.dataset.label_set
    items, ids = [], []
    for level in range(len(label_set)):
        candidates = [t for t in pool.dataset.trees if t.gold_label == level and t.id != query.id]
        if not candidates:
            raise CoverageError(label_set[level])
        best = min(candidates, key=lambda t: (-cosine_similarity(query_embedding, pool.embeddings[t.id]), t.id))
        items.append((pool.renderings[best.id], level))
        ids.append(best.id)
    return DemonstrationSet(tuple(items), tuple(ids))


# ---------------------------------------------------------------- voting


def parse_label(text: str, label_set: RiskLabelSet) -> int | None:
    """Exact label, then a ``Risk level: X`` line, then a lone label mentioned anywhere."""
    stripped = text.strip().strip(".*`\"' ")
    for i, name in enumerate(label_set.labels):
        if stripped.lower() == name.lower():
            return i
    m = re.search(r"risk\s+level\s*[:=]\s*\**\s*([^\n*]+)", text, re.IGNORECASE)
    if m:
        answer = m.group(1).strip().strip(".`\"' ")
        for i, name in enumerate(label_set.labels):
            if answer.lower() == name.lower():
                return i
    found = {
        i for i, name in enumerate(label_set.labels)
        if re.search(rf"(?<![\w]){re.escape(name)}(?![\w])", text, re.IGNORECASE)
    }
    return found.pop() if len(found) == 1 else None


def vote_nonce(seed: int, tree_id: str, mediator_index: int, t_index: int) -> str:
    return f"{derive_seed(seed, 'vote', tree_id, mediator_index, t_index):016x}"


def _decision_request(cfg, backend: Backend, role: str, template: str, user_extra: str = "", **values) -> ChatRequest:
    system, user = cfg.prompts[template].render(**values)
    return ChatRequest(
        role_name=role,
        system_prompt=system,
        user_prompt=user + user_extra,
        temperature=backend.config.temperature_for(role),
        max_output_tokens=cfg.max_output_tokens,
    )


def _ask_label(cfg, backend: Backend, role: str, template: str, values: dict) -> tuple[int, str]:
    raws = []
    for extra in ("", STRICT_SUFFIX):
        raw = backend.chat(_decision_request(cfg, backend, role, template, extra, **values))
        raws.append(raw)
        label = parse_label(raw, cfg.label_set)
        if label is not None:
            return label, raw
    raise LabelParseError(raws)


def decide_once(
    rep: Inference | None,
    tree: ConversationTree,
    demos: DemonstrationSet,
    t_index: int,
    cfg,
    backend: Backend,
    *,
    mediator_index: int = 0,
) -> tuple[int, str]:
    """One decision call; returns (label index, raw completion).

    ``rep=None`` drops the inference section (tree-only decision).
    """
    values = {
        "demonstrations": demos.render(cfg.label_set),
        "tree": render_tree(tree, cfg.max_depth, cfg.max_nodes),
        "labels": ", ".join(cfg.label_set.labels),
        "nonce": vote_nonce(cfg.seed, tree.id, mediator_index, t_index),
    }
    if rep is None:
        return _ask_label(cfg, backend, "decision", "decision_tree_only", values)
    values["inference"] = rep.text
    return _ask_label(cfg, backend, "decision", "decision", values)


def frequency_vector(votes: Sequence[int], size: int) -> RiskDistribution:
    T = len(votes)
    return RiskDistribution(tuple(Fraction(sum(1 for v in votes if v == y), T) for y in range(size)))


def vote(
    rep: Inference | None,
    tree: ConversationTree,
    demos: DemonstrationSet,
    T: int,
    cfg,
    backend: Backend,
    *,
    mediator_index: int = 0,
) -> tuple[RiskDistribution, VoteRecord]:
    """``T`` independent decisions turned into a per-label frequency vector."""
    if T < 1:
        raise ValidationError("votes", "T must be >= 1")
    results = []
    for t in range(T):
        try:
            results.append(decide_once(rep, tree, demos, t, cfg, backend, mediator_index=mediator_index))
        except MacrError as exc:
            exc.args = (f"vote {t}: {exc.args[0] if exc.args else exc}",)
            raise
    votes = tuple(r[0] for r in results)
    record = VoteRecord(mediator_index, votes, tuple(r[1] for r in results))
    return frequency_vector(votes, len(cfg.label_set)), record


def frontdoor_mixture(mediators: MediatorSet, vote_dists: Sequence[RiskDistribution]) -> RiskDistribution:
    """Cluster-probability-weighted sum of the per-representative vote distributions."""
    if len(vote_dists) != mediators.k or len(mediators.probabilities) != mediators.k:
        raise ValidationError("vote_dists", f"{len(vote_dists)} distributions for {mediators.k} mediators")
    sizes = {len(d) for d in vote_dists}
    if len(sizes) != 1:
        raise ValidationError("vote_dists", "distributions differ in length")
    L = sizes.pop()
    mixed = [sum((w * d.probs[y] for w, d in zip(mediators.probabilities, vote_dists)), Fraction(0)) for y in range(L)]
    total = sum(mixed)
    if total != 1:
        if abs(float(total) - 1.0) > MIXTURE_SLACK:
            raise ValueError(f"mixture sums to {float(total)}")
        mixed = [p / total for p in mixed]
    return RiskDistribution(tuple(mixed))


def argmax_higher(dist: RiskDistribution) -> int:
    """Most probable level; ties go to the higher-risk level."""
    best = max(dist.probs)
    return max(i for i, p in enumerate(dist.probs) if p == best)


# ---------------------------------------------------------------- pipeline


def _stage(name: str, tree_id: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except MacrError as exc:
        raise StageError(name, tree_id, exc) from exc


def _map_ordered(backend: Backend, fn, items):
    with ThreadPoolExecutor(max_workers=max(1, min(len(items), backend.max_inflight))) as pool:
        futures = [pool.submit(fn, *item) for item in items]
        return [f.result() for f in futures]


def predict(tree: ConversationTree, pool: PoolIndex, cfg, backend: Backend) -> Prediction:
    """Run the configured pipeline variant end to end for one tree."""
    L = len(cfg.label_set)
    prov: dict = {
        "ablation": cfg.ablation,
        "n": cfg.n,
        "K": cfg.clusters,
        "T": cfg.votes,
        "seed": cfg.seed,
        "prompt_version": cfg.prompts.version,
        "transcripts": [],
        "demonstration_retrievals": 0,
        "demo_ids": [],
    }

    mediators = None
    if cfg.ablation != "no_reasoner":
        inferences = _stage("reason", tree.id, generate_inferences, tree, cfg.n, cfg, backend)
        if not inferences:
            raise StageError("reason", tree.id, MacrError("no inferences survived"))
        prov["transcripts"] = [inf.source.as_dict() for inf in inferences]
        cluster_seed = cfg.cluster_seed_for(tree.id)
        mediators, assignment = _stage(
            "cluster", tree.id, build_mediators, inferences, cfg.clusters, cluster_seed,
            normalize=cfg.normalize_embeddings, max_iters=cfg.kmeans_max_iters, tol=cfg.kmeans_tol, n_init=cfg.kmeans_n_init,
        )
        prov.update(
            cluster_seed=cluster_seed,
            effective_K=mediators.k,
            cluster_sizes=list(mediators.cluster_sizes),
            cluster_probs=[str(p) for p in mediators.probabilities],
            inertia=assignment.inertia,
            assignments=list(assignment.assignments),
            representatives=[r.generation_index for r in mediators.representatives],
        )

    if cfg.ablation == "no_decider":
        def direct(i, rep):
            values = {"inference": rep.text, "labels": ", ".join(cfg.label_set.labels),
                      "nonce": vote_nonce(cfg.seed, tree.id, i, 0)}
            label, raw = _ask_label(cfg, backend, "direct", "direct", values)
            return VoteRecord(i, (label,), (raw,))

        records = _stage("decide", tree.id, _map_ordered, backend, direct, list(enumerate(mediators.representatives)))
        dists = [RiskDistribution.one_hot(r.votes[0], L) for r in records]
        final = frontdoor_mixture(mediators, dists)
    else:
        query_embedding = _stage("retrieve", tree.id, backend.embed, render_tree(tree, cfg.max_depth, cfg.max_nodes))
        demos = _stage("retrieve", tree.id, retrieve_demonstrations, tree, pool, query_embedding)
        prov["demonstration_retrievals"] = 1
        prov["demo_ids"] = list(demos.source_ids)
        if mediators is None:
            dist, record = _stage("decide", tree.id, vote, None, tree, demos, cfg.votes, cfg, backend)
            records, final = [record], dist
        else:
            pairs = _stage(
                "decide", tree.id, _map_ordered, backend,
                lambda i, rep: vote(rep, tree, demos, cfg.votes, cfg, backend, mediator_index=i),
                list(enumerate(mediators.representatives)),
            )
            records = [p[1] for p in pairs]
            final = frontdoor_mixture(mediators, [p[0] for p in pairs])

    prov["votes"] = [list(r.votes) for r in records]
    label = argmax_higher(final)
    return Prediction(tree.id, label, final, prov)
