"""Retrieval-augmented QA driven by LLM-guided spreading activation over a triple KG:
KG-based query expansion, fact-augmented answering, QA metrics and DPO data."""

from .activation import ActivationConfig, ActivationMemory, SubgraphSummary, run_activation
from .gateway import DecodingParams, Gateway, mock_gateway
from .index import EmbeddingMatrix, HashEmbedder, Passage, ScoredHit, top_k
from .kgstore import KGStore, RawKG, Triple, filter_complete, load_raw
from .pipeline import PipelineConfig, QuerySession, Resources, RetrievalPlan, run

__all__ = [
    "ActivationConfig", "ActivationMemory", "SubgraphSummary", "run_activation",
    "DecodingParams", "Gateway", "mock_gateway",
    "EmbeddingMatrix", "HashEmbedder", "Passage", "ScoredHit", "top_k",
    "KGStore", "RawKG", "Triple", "filter_complete", "load_raw",
    "PipelineConfig", "QuerySession", "Resources", "RetrievalPlan", "run",
]
__version__ = "0.1.0"
