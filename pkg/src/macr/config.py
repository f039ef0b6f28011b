"""Pipeline configuration, read from an INI-style key/value file.

Example::

    [pipeline]
    n = 10
    clusters = 3
    votes = 3
    seed = 0
    ablation = full          ; full | no_reasoner | no_decider | analyst_only
    labels = L0,L1,L2,L3
    max_depth = 6
    max_nodes = 60

    [backend]
    kind = http              ; http | stub
    cache_dir = .macr-cache
    max_inflight = 4

    [route:default]
    endpoint = https://api.deepseek.com/v1
    model = deepseek-chat
    api_key_env = DEEPSEEK_API_KEY

    [route:analyst]
    endpoint = http://localhost:8000/v1
    model = qwen3-4b-instruct
    temperature = 0.9

    [embedding]
    endpoint = http://localhost:8001/v1
    model = e5-large-v2
    dim = 1024
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

from .backend import CHAT_ROLES, Backend, BackendConfig, HttpTransport, RetryPolicy, Route, StubTransport
from .errors import ValidationError
from .prompts import PromptSet
from .seeding import derive_seed
from .treemodel import RiskLabelSet

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_reasoner", "no_decider", "analyst_only")
TIE_RULES = ("higher",)


@dataclass
class PipelineConfig:
    n: int = 10
    clusters: int = 3
    votes: int = 3
    seed: int = 0
    fold_seed: int | None = None
    cluster_seed: int | None = None
    ablation: str = "full"
    label_set: RiskLabelSet = field(default_factory=RiskLabelSet)
    max_depth: int = 6
    max_nodes: int = 60
    normalize_embeddings: bool = False
    synthesizer_sees_tree: bool = True
    on_error: str = "fail"
    tie_rule: str = "higher"
    kmeans_max_iters: int = 300
    kmeans_tol: float = 1e-8
    kmeans_n_init: int = 10
    max_output_tokens: int = 1024
    prompt_dir: Path | None = None
    backend_kind: str = "http"
    backend: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n", "clusters", "votes", "max_depth", "max_nodes", "kmeans_max_iters", "kmeans_n_init", "max_output_tokens"):
            if getattr(self, name) < 1:
                raise ValidationError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.ablation not in ABLATIONS:
            raise ValidationError("ablation", f"{self.ablation!r} not in {ABLATIONS}")
        if self.tie_rule not in TIE_RULES:
            raise ValidationError("tie_rule", "only 'higher' is supported")
        if self.on_error not in ("fail", "skip"):
            raise ValidationError("on_error", "must be 'fail' or 'skip'")
        if self.backend_kind not in ("http", "stub"):
            raise ValidationError("backend.kind", "must be 'http' or 'stub'")
        if self.prompt_dir is not None and not Path(self.prompt_dir).is_dir():
            raise ValidationError("prompt_dir", f"{self.prompt_dir} is not a directory")
        if self.backend.embedding_dim < 1:
            raise ValidationError("embedding.dim", "must be >= 1")
        self.backend.check_roles(self.roles_used())
        if self.n < self.clusters:
            log.warning("n=%d < K=%d; K will be lowered per tree", self.n, self.clusters)

    def roles_used(self) -> tuple[str, ...]:
        return {
            "full": ("analyst", "critic", "empiricist", "synthesizer", "decision"),
            "analyst_only": ("analyst", "decision"),
            "no_reasoner": ("decision",),
            "no_decider": ("analyst", "critic", "empiricist", "synthesizer", "direct"),
        }[self.ablation]

    @cached_property
    def prompts(self) -> PromptSet:
        return PromptSet.load(self.prompt_dir)

    def fold_seed_value(self) -> int:
        return self.fold_seed if self.fold_seed is not None else derive_seed(self.seed, "folds")

    def cluster_seed_for(self, tree_id: str) -> int:
        base = self.cluster_seed if self.cluster_seed is not None else derive_seed(self.seed, "cluster")
        return derive_seed(base, tree_id)

    def with_overrides(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "K": self.clusters,
            "T": self.votes,
            "seed": self.seed,
            "fold_seed": self.fold_seed_value(),
            "ablation": self.ablation,
            "labels": list(self.label_set.labels),
            "max_depth": self.max_depth,
            "max_nodes": self.max_nodes,
            "normalize_embeddings": self.normalize_embeddings,
            "tie_rule": self.tie_rule,
            "backend": self.backend_kind,
            "routes": {
                role: {"model": self.backend.route_for(role).model, "endpoint": self.backend.route_for(role).endpoint}
                for role in self.roles_used()
            },
            "embedding_model": self.backend.embedding.model,
            "embedding_dim": self.backend.embedding_dim,
        }


# ---------------------------------------------------------------- file loading

_INT_KEYS = {
    "n": "n", "clusters": "clusters", "k": "clusters", "votes": "votes", "t": "votes", "seed": "seed",
    "fold_seed": "fold_seed", "cluster_seed": "cluster_seed", "max_depth": "max_depth", "max_nodes": "max_nodes",
    "kmeans_max_iters": "kmeans_max_iters", "kmeans_n_init": "kmeans_n_init", "max_output_tokens": "max_output_tokens",
}
_BOOL_KEYS = {"normalize_embeddings", "synthesizer_sees_tree"}
_STR_KEYS = {"ablation", "on_error", "tie_rule"}


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        return kind(raw.strip())
    except (ValueError, KeyError):
        raise ValidationError(f"{section}.{key}", f"cannot read {raw!r} as {kind.__name__}") from None


def _route(section: configparser.SectionProxy, base: Route, name: str) -> Route:
    unknown = set(section) - {"endpoint", "model", "api_key_env", "temperature"}
    if unknown:
        raise ValidationError(name, f"unknown keys {sorted(unknown)}")
    temp = section.get("temperature")
    return Route(
        endpoint=section.get("endpoint", base.endpoint),
        model=section.get("model", base.model),
        api_key_env=section.get("api_key_env", base.api_key_env),
        temperature=_convert(name, "temperature", temp, float) if temp is not None else base.temperature,
    )


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Build a config from ``path`` (optional) and keyword overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), default_section="__none__")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError("config", f"{path} does not exist")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ValidationError("config", str(exc).splitlines()[0]) from None

    kwargs: dict = {}
    if parser.has_section("pipeline"):
        for key, raw in parser["pipeline"].items():
            if key in _INT_KEYS:
                kwargs[_INT_KEYS[key]] = _convert("pipeline", key, raw, int)
            elif key in _BOOL_KEYS:
                kwargs[key] = _convert("pipeline", key, raw, bool)
            elif key in _STR_KEYS:
                kwargs[key] = raw.strip()
            elif key == "kmeans_tol":
                kwargs[key] = _convert("pipeline", key, raw, float)
            elif key == "labels":
                kwargs["label_set"] = RiskLabelSet.parse(raw)
            elif key == "prompt_dir":
                kwargs["prompt_dir"] = (path.parent / raw.strip()) if path else Path(raw.strip())
            else:
                raise ValidationError(f"pipeline.{key}", "unknown key")

    backend_kw: dict = {}
    retry = RetryPolicy()
    if parser.has_section("backend"):
        sec = parser["backend"]
        for key, raw in sec.items():
            if key == "kind":
                kwargs["backend_kind"] = raw.strip()
            elif key == "cache_dir":
                backend_kw["cache_dir"] = (path.parent / raw.strip()) if path else Path(raw.strip())
            elif key == "max_inflight":
                backend_kw["max_inflight"] = _convert("backend", key, raw, int)
            elif key == "timeout":
                backend_kw["timeout"] = _convert("backend", key, raw, float)
            elif key == "max_attempts":
                retry = replace(retry, max_attempts=_convert("backend", key, raw, int))
            elif key == "backoff":
                retry = replace(retry, backoff=_convert("backend", key, raw, float))
            else:
                raise ValidationError(f"backend.{key}", "unknown key")
    if retry.max_attempts < 1:
        raise ValidationError("backend.max_attempts", "must be >= 1")

    routes: dict[str, Route] = {}
    default = Route()
    if parser.has_section("route:default"):
        default = _route(parser["route:default"], Route(), "route:default")
    routes["default"] = default
    for name in parser.sections():
        if name.startswith("route:") and name != "route:default":
            role = name.split(":", 1)[1]
            if role not in CHAT_ROLES:
                raise ValidationError(name, f"unknown role; expected one of {CHAT_ROLES}")
            routes[role] = _route(parser[name], default, name)
        elif name not in ("pipeline", "backend", "embedding", "route:default"):
            raise ValidationError(name, "unknown section")

    embedding = Route(model="stub-embed")
    dim = 1024
    if parser.has_section("embedding"):
        sec = parser["embedding"]
        dim = _convert("embedding", "dim", sec.get("dim", "1024"), int)
        embedding = Route(
            endpoint=sec.get("endpoint", default.endpoint),
            model=sec.get("model", "e5-large-v2"),
            api_key_env=sec.get("api_key_env", default.api_key_env),
        )

    backend = BackendConfig(routes=routes, embedding=embedding, embedding_dim=dim, retry=retry, **backend_kw)
    kwargs.update(overrides)
    kwargs.setdefault("backend", backend)
    return PipelineConfig(**kwargs)


def make_backend(cfg: PipelineConfig, transport=None) -> Backend:
    if transport is None:
        if cfg.backend_kind == "stub":
            transport = StubTransport(dim=cfg.backend.embedding_dim)
        else:
            transport = HttpTransport(cfg.backend.timeout)
    return Backend(cfg.backend, transport)
