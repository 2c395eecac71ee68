"""Zero-shot visual recognition evaluation engine.

Two evaluation paths over image, video, and point-cloud datasets: a
description-ensemble classifier built on precomputed embeddings, and direct
top-5 ranking by a vision-chat model through an OpenAI-compatible API.
"""

from .ensemble import EnsembleConfig, Prediction, ensemble_scores, pool_vision_embedding, score_matrix, top_k
from .manifest import (
    CategorySet,
    DatasetManifest,
    SampleRecord,
    hash_sample_id,
    load_manifest,
    normalize_category,
    write_manifest,
)
from .media import FrameSamplerConfig, PointCloud, RenderConfig, load_frames, render_depth_views, sample_frame_indices
from .metrics import RunResult, SampleResult, ablation_table, average_over_datasets, delta_table, per_class_accuracy, topk_accuracy
from .parsing import MatchPolicy, ParseOutcome, extract_ranked_list, match_category, parse_topk
from .prompts import GenerationPolicy, PromptSet, build_description_request, compose_prompts, parse_description_response
from .store import EmbeddingStore, read_store, write_store
from .vlm import CostLedger, RawResponse, TransportPolicy, VisionRequest, VlmClient, build_vision_request, detect_refusal, estimate_cost

__version__ = "0.1.0"

__all__ = [
    "CategorySet",
    "CostLedger",
    "DatasetManifest",
    "EmbeddingStore",
    "EnsembleConfig",
    "FrameSamplerConfig",
    "GenerationPolicy",
    "MatchPolicy",
    "ParseOutcome",
    "PointCloud",
    "Prediction",
    "PromptSet",
    "RawResponse",
    "RenderConfig",
    "RunResult",
    "SampleRecord",
    "SampleResult",
    "TransportPolicy",
    "VisionRequest",
    "VlmClient",
    "ablation_table",
    "average_over_datasets",
    "build_description_request",
    "build_vision_request",
    "compose_prompts",
    "delta_table",
    "detect_refusal",
    "ensemble_scores",
    "estimate_cost",
    "extract_ranked_list",
    "hash_sample_id",
    "load_frames",
    "load_manifest",
    "match_category",
    "normalize_category",
    "parse_description_response",
    "parse_topk",
    "per_class_accuracy",
    "pool_vision_embedding",
    "read_store",
    "render_depth_views",
    "sample_frame_indices",
    "score_matrix",
    "top_k",
    "topk_accuracy",
    "write_manifest",
    "write_store",
]
