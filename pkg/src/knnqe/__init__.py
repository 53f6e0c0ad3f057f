"""Reference-free MT quality estimation from nearest neighbors, plus
the machinery to judge QE metrics without human scores."""

from .datastore import Datastore, build, from_bundle, open_store
from .errors import DataError, KnnqeError, UsageError, ValidationError
from .interchange import (
    Bundle,
    ScoreFragment,
    ScoreMatrix,
    Sentence,
    align_tables,
    load_bundle,
    read_manifest,
    read_score_table,
    read_tensor,
    validate_bundle,
    write_manifest,
    write_score_table,
    write_tensor,
)
from .meta_eval import (
    GroupedReports,
    MetaEvalReport,
    auto_ranking,
    average_ranks,
    evaluate,
    gold_ranking,
    grouped_evaluate,
    pearson,
    reference_ablation,
    spearman,
)
from .qe_metrics import (
    METRICS,
    QEMetricSeries,
    aggregate_segment,
    avg_probability,
    distinct_tokens,
    ensemble,
    match_count,
    score_corpus,
    sentence_similarity,
    token_distance,
)
from .ref_metrics import (
    ReferenceSet,
    best_reference_score,
    ingest_external,
    sentence_bleu,
    sentence_chrf,
    tokenize,
)
from .retrieval import (
    IvfIndex,
    Neighbor,
    NeighborSet,
    build_ivf,
    load_ivf,
    save_ivf,
    search_batch,
    search_exact,
    search_ivf,
)
from .token_eval import best_f1, token_pearson

__all__ = [
    "Bundle",
    "Datastore",
    "DataError",
    "GroupedReports",
    "IvfIndex",
    "KnnqeError",
    "METRICS",
    "MetaEvalReport",
    "Neighbor",
    "NeighborSet",
    "QEMetricSeries",
    "ReferenceSet",
    "ScoreFragment",
    "ScoreMatrix",
    "Sentence",
    "UsageError",
    "ValidationError",
    "aggregate_segment",
    "align_tables",
    "auto_ranking",
    "average_ranks",
    "avg_probability",
    "best_f1",
    "best_reference_score",
    "build",
    "build_ivf",
    "distinct_tokens",
    "ensemble",
    "evaluate",
    "from_bundle",
    "gold_ranking",
    "grouped_evaluate",
    "ingest_external",
    "load_bundle",
    "load_ivf",
    "match_count",
    "open_store",
    "pearson",
    "read_manifest",
    "read_score_table",
    "read_tensor",
    "reference_ablation",
    "save_ivf",
    "score_corpus",
    "search_batch",
    "search_exact",
    "search_ivf",
    "sentence_bleu",
    "sentence_chrf",
    "sentence_similarity",
    "spearman",
    "token_distance",
    "token_pearson",
    "tokenize",
    "validate_bundle",
    "write_manifest",
    "write_score_table",
    "write_tensor",
]
