"""donod: weight-dynamics dataset pruning for instruction tuning.

Score every sample by the update it induces on a probe model's output
layer (DON = change of the Frobenius norm, NOD = Frobenius norm of the
change), rank the samples with TOPSIS, and keep the top slice.
"""

from .dataset import IngestResult, SampleRecord, ingest_dataset, write_dataset
from .errors import DonodError
from .harness import (
    CorpusBundle,
    NodonResult,
    NoiseExperimentReport,
    NoiseSpec,
    OverlapReport,
    QualityReport,
    build_nodon_dataset,
    fine_tune,
    inject_noise,
    make_corpus,
    noise_experiment,
    selection_overlap,
    subset_quality_experiment,
    warm_probe,
)
from .linalg import Matrix, frobenius_norm, scaled_axpy, sub
from .metrics import (
    LayerDelta,
    SampleMetrics,
    ScoreResult,
    don,
    nod,
    rank_layers,
    read_metrics,
    score_dataset,
    write_metrics,
)
from .probe import (
    ProbeConfig,
    ProbeModel,
    TinyLM,
    cross_entropy_loss,
    load_snapshot_pair,
    probe_step,
    read_snapshot,
    write_snapshot,
)
from .select import (
    CriterionMatrix,
    RankedSelection,
    make_selection,
    pareto_rank,
    rank,
    select_top,
    single_metric_scores,
    topsis_scores,
    vector_normalize,
    weighted_sum_scores,
)

__version__ = "0.1.0"

__all__ = [
    "CorpusBundle",
    "CriterionMatrix",
    "DonodError",
    "IngestResult",
    "LayerDelta",
    "Matrix",
    "NodonResult",
    "NoiseExperimentReport",
    "NoiseSpec",
    "OverlapReport",
    "ProbeConfig",
    "ProbeModel",
    "QualityReport",
    "RankedSelection",
    "SampleMetrics",
    "SampleRecord",
    "ScoreResult",
    "TinyLM",
    "build_nodon_dataset",
    "cross_entropy_loss",
    "don",
    "fine_tune",
    "frobenius_norm",
    "ingest_dataset",
    "inject_noise",
    "load_snapshot_pair",
    "make_corpus",
    "make_selection",
    "noise_experiment",
    "nod",
    "pareto_rank",
    "probe_step",
    "rank",
    "rank_layers",
    "read_metrics",
    "read_snapshot",
    "scaled_axpy",
    "score_dataset",
    "select_top",
    "selection_overlap",
    "single_metric_scores",
    "sub",
    "subset_quality_experiment",
    "topsis_scores",
    "vector_normalize",
    "warm_probe",
    "weighted_sum_scores",
    "write_dataset",
    "write_metrics",
    "write_snapshot",
]
