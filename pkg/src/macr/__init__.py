"""Multi-agent causal reasoning pipeline for risk-level prediction over conversation trees."""

from .backend import Backend, BackendConfig, ChatRequest, EmbeddingVector, StubTransport, cosine_similarity
from .causal_lab import DiscreteScm, enumerate_interventional, frontdoor_estimate, naive_estimate, sample, scm_a
from .config import PipelineConfig, load_config, make_backend
from .decider import PoolIndex, RiskDistribution, frontdoor_mixture, predict, retrieve_demonstrations, vote
from .evalharness import ConfusionMatrix, compare_reports, run_experiment, weighted_metrics
from .mediator import build_mediators, kmeans, select_representatives
from .reasoner import generate_inferences, run_debate
from .treemodel import ConversationTree, Dataset, RiskLabelSet, kfold_split, parse_dataset, render_tree

__version__ = "0.1.0"
