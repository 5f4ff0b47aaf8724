"""typofuse: product retrieval with listing text rendered onto the images.

The pipeline: derive a title for each listing, optionally draw it onto the
product image (embedding path only), embed with a dual encoder, fuse image
and text embeddings, and rank candidates by exact cosine search.
"""

from .encoders import (
    Embedding,
    EncoderHandle,
    Modality,
    RemoteEncoder,
    embed_image_reference,
    embed_remote,
    embed_text_reference,
)
from .fusion import FusionStrategy, cosine, fuse
from .harness import (
    EncoderPair,
    ExperimentConfig,
    FactorGrid,
    MetricsReport,
    Mode,
    acc_at_k,
    embed_listing,
    factor_sweep,
    run_experiment,
)
from .ingest import Listing, Query, derive_title, load_manifest, load_query_manifest
from .knn import KnnIndex, ResultList, build_index, load_index, save_index, search
from .synthetic import SyntheticCorpusSpec, generate_synthetic_corpus
from .typograph import (
    Location,
    RenderSpec,
    RenderedImage,
    TextMeasurer,
    compute_anchor,
    get_max_font_size,
    render_text,
)

__version__ = "0.1.0"

__all__ = [
    "Embedding",
    "EncoderHandle",
    "EncoderPair",
    "ExperimentConfig",
    "FactorGrid",
    "FusionStrategy",
    "KnnIndex",
    "Listing",
    "Location",
    "MetricsReport",
    "Modality",
    "Mode",
    "Query",
    "RemoteEncoder",
    "RenderSpec",
    "RenderedImage",
    "ResultList",
    "SyntheticCorpusSpec",
    "TextMeasurer",
    "acc_at_k",
    "build_index",
    "compute_anchor",
    "cosine",
    "derive_title",
    "embed_image_reference",
    "embed_listing",
    "embed_remote",
    "embed_text_reference",
    "factor_sweep",
    "fuse",
    "generate_synthetic_corpus",
    "get_max_font_size",
    "load_index",
    "load_manifest",
    "load_query_manifest",
    "render_text",
    "run_experiment",
    "save_index",
    "search",
]
