"""Zero-shot human-activity recognition for smart-home sensor logs.

Windows of sensor events become templated text summaries; summaries and
one-sentence activity descriptors are embedded with a pluggable sentence
encoder; classification is similarity argmax against the descriptor
anchors, optionally augmented with labeled exemplar summaries.
"""

from .classify import (
    Anchor,
    AnchorSet,
    Prediction,
    build_fewshot_anchors,
    classify,
    cosine,
    l2_distance,
)
from .embedding import (
    CacheEmbeddingProvider,
    Embedding,
    EmbeddingProvider,
    EmbeddingProviderSpec,
    HttpEmbeddingProvider,
    HashEmbeddingProvider,
    build_provider,
    cache_read,
    cache_write,
    normalize,
)
from .errors import (
    CacheMissError,
    ConfigError,
    CorruptCacheError,
    DataError,
    DimensionMismatchError,
    EmbedharError,
    ProviderError,
    RetryExhaustedError,
)
from .evaluate import (
    ConfusionMatrix,
    EvaluationReport,
    FewShotRun,
    aggregate_few_shot,
    compute_metrics,
    run_ablation,
    run_few_shot,
    run_zero_shot,
    run_zero_shot_detailed,
    split_support,
    write_report,
)
from .ingest import (
    CsvMapping,
    SegmentationReport,
    filter_labels,
    ingest_casas_file,
    ingest_csv_file,
    parse_casas_line,
    segment_by_annotations,
)
from .model import (
    ActivityLabel,
    ActivityWindow,
    HomeLayout,
    Modality,
    SensorEvent,
    load_layout,
    read_corpus,
    validate_window,
    write_corpus,
)
from .textgen import (
    ActivityDescriptor,
    SpecialRule,
    Summary,
    SummaryConfig,
    load_descriptors,
    load_summary_config,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "ActivityDescriptor",
    "ActivityLabel",
    "ActivityWindow",
    "Anchor",
    "AnchorSet",
    "CacheEmbeddingProvider",
    "CacheMissError",
    "ConfigError",
    "ConfusionMatrix",
    "CorruptCacheError",
    "CsvMapping",
    "DataError",
    "DimensionMismatchError",
    "EmbedharError",
    "Embedding",
    "EmbeddingProvider",
    "EmbeddingProviderSpec",
    "EvaluationReport",
    "FewShotRun",
    "HomeLayout",
    "HttpEmbeddingProvider",
    "Modality",
    "Prediction",
    "ProviderError",
    "RetryExhaustedError",
    "SegmentationReport",
    "SensorEvent",
    "SpecialRule",
    "Summary",
    "SummaryConfig",
    "HashEmbeddingProvider",
    "aggregate_few_shot",
    "build_fewshot_anchors",
    "build_provider",
    "cache_read",
    "cache_write",
    "classify",
    "compute_metrics",
    "cosine",
    "filter_labels",
    "ingest_casas_file",
    "ingest_csv_file",
    "l2_distance",
    "load_descriptors",
    "load_layout",
    "load_summary_config",
    "normalize",
    "parse_casas_line",
    "read_corpus",
    "run_ablation",
    "run_few_shot",
    "run_zero_shot",
    "run_zero_shot_detailed",
    "segment_by_annotations",
    "split_support",
    "summarize",
    "validate_window",
    "write_corpus",
    "write_report",
]
