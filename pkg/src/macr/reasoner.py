"""Reasoning agent: a three-round, four-role debate yielding counterfactual inferences."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

from .backend import Backend, ChatRequest, EmbeddingVector
from .errors import DebateError, EmptyOutputError, MacrError
from .seeding import derive_seed
from .treemodel import ConversationTree, render_tree

log = logging.getLogger(__name__)

ROLE_TITLES = {
    "analyst": "Psychological Analyst",
    "critic": "Critical Thinker",
    "empiricist": "Empiricist",
    "synthesizer": "Synthesizer",
}
EVIDENCE_LEVELS = ("Low", "Medium", "High", "Unspecified")

_LABELLED_LEVEL = re.compile(r"evidence\s+(?:level|strength)\s*[:=\-]?\s*\**\s*(low|medium|high)\b", re.IGNORECASE)
_BARE_LEVEL = re.compile(r"\b(Low|Medium|High)\b")


@dataclass(frozen=True)
class DebateTranscript:
    tree_id: str
    generation_index: int
    analyst_output: str
    critic_output: str = ""
    empiricist_output: str = ""
    synthesis: str = ""
    rounds: int = 3
    nonce: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Inference:
    text: str
    evidence_level: str
    source: DebateTranscript
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyOutputError("inference text is empty")
        if self.evidence_level not in EVIDENCE_LEVELS:
            raise ValueError(f"unknown evidence level {self.evidence_level!r}")

    @property
    def generation_index(self) -> int:
        return self.source.generation_index

    @property
    def tree_id(self) -> str:
        return self.source.tree_id


def parse_evidence_level(text: str) -> str:
    m = _LABELLED_LEVEL.search(text)
    if m:
        return m.group(1).capitalize()
    m = _BARE_LEVEL.search(text)
    return m.group(1) if m else "Unspecified"


def debate_nonce(seed: int, tree_id: str, generation_index: int) -> str:
    return f"{derive_seed(seed, 'nonce', tree_id, generation_index):016x}"


def _ask(backend: Backend, cfg, role: str, round_no: int, **values: str) -> str:
    system, user = cfg.prompts[role].render(**values)
    req = ChatRequest(
        role_name=role,
        system_prompt=system,
        user_prompt=user,
        temperature=backend.config.temperature_for(role),
        max_output_tokens=cfg.max_output_tokens,
    )
    try:
        return backend.chat(req)
    except EmptyOutputError:
        raise EmptyOutputError(f"round {round_no}, role {ROLE_TITLES[role]}: empty completion") from None
    except MacrError as exc:
        raise DebateError(round_no, role, exc) from exc


def run_debate(tree: ConversationTree, gen_index: int, cfg, backend: Backend, *, rounds: int = 3) -> Inference:
    """Run one debate over ``tree``; ``rounds=1`` keeps only the analyst."""
    rendering = render_tree(tree, cfg.max_depth, cfg.max_nodes)
    nonce = debate_nonce(cfg.seed, tree.id, gen_index)

    analyst = _ask(backend, cfg, "analyst", 1, tree=rendering, nonce=nonce)
    if rounds == 1:
        transcript = DebateTranscript(tree.id, gen_index, analyst, rounds=1, nonce=nonce)
        return Inference(analyst, parse_evidence_level(analyst), transcript)

    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = {
            role: pool.submit(_ask, backend, cfg, role, 2, tree=rendering, analyst=analyst, nonce=nonce)
            for role in ("critic", "empiricist")
        }
        # critic is checked first so failures surface in a fixed order
        critic = futures["critic"].result()
        empiricist = futures["empiricist"].result()

    synth_tree = rendering if cfg.synthesizer_sees_tree else "(not shown)"
    synthesis = _ask(
        backend, cfg, "synthesizer", 3,
        tree=synth_tree, analyst=analyst, critic=critic, empiricist=empiricist, nonce=nonce,
    )
    transcript = DebateTranscript(tree.id, gen_index, analyst, critic, empiricist, synthesis, 3, nonce)
    return Inference(synthesis, parse_evidence_level(synthesis), transcript)


def _one(tree, i, cfg, backend, rounds) -> Inference:
    try:
        inference = run_debate(tree, i, cfg, backend, rounds=rounds)
        return replace(inference, embedding=backend.embed(inference.text))
    except DebateError as exc:
        exc.generation_index = i
        exc.args = (f"generation {i}: {exc.args[0]}",)
        raise
    except MacrError as exc:
        exc.args = (f"generation {i}: {exc.args[0] if exc.args else exc}",)
        raise


def generate_inferences(
    tree: ConversationTree,
    n: int,
    cfg,
    backend: Backend,
    *,
    on_error: str | None = None,
    failures: list | None = None,
) -> list[Inference]:
    """Run ``n`` independent debates and embed each synthesis.

    Identical syntheses are kept as separate inferences. With
    ``on_error="skip"`` failed generations are dropped and appended to
    ``failures`` as ``(index, error)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    policy = on_error or cfg.on_error
    rounds = 1 if cfg.ablation == "analyst_only" else 3
    with ThreadPoolExecutor(max_workers=min(n, backend.max_inflight)) as pool:
        futures = [pool.submit(_one, tree, i, cfg, backend, rounds) for i in range(n)]
        out = []
        for i, fut in enumerate(futures):
            try:
                out.append(fut.result())
            except MacrError as exc:
                if policy != "skip":
                    for pending in futures[i + 1:]:
                        pending.cancel()
                    raise
                log.warning("tree %s generation %d skipped: %s", tree.id, i, type(exc).__name__)
                if failures is not None:
                    failures.append((i, exc))
    return out
