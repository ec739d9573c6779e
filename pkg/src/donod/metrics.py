"""DON/NOD metrics over weight pairs, dataset scoring, and layer ranking.

For a weight matrix W before and W' after a one-sample update:

    don = ||W||_F - ||W'||_F      (positive when the update shrinks the norm)
    nod = ||W - W'||_F            (how far the update moved the weights)

The reverse triangle inequality guarantees |don| <= nod, which doubles as
a consistency check on every scored sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import SampleRecord
from .errors import DataError, FormatError, IoError, NoScoreableSamples, ShapeMismatch
from .ioutil import atomic_write_text, fmt17
from .linalg import Matrix, frobenius_norm, sub
from .probe import ProbeConfig, ProbeModel, probe_step

_RTI_SLACK = 1e-9


@dataclass(frozen=True)
class SampleMetrics:
    """Per-sample (don, nod) pair plus probe provenance."""

    sample_id: str
    don: float
    nod: float
    lr: float
    probe_tag: str = ""

    def __post_init__(self):
        values = (self.don, self.nod, self.lr)
        if not all(np.isfinite(v) for v in values):
            raise DataError(f"sample {self.sample_id!r}: non-finite metric in {values}")
        if self.nod < 0:
            raise DataError(f"sample {self.sample_id!r}: nod must be >= 0, got {self.nod}")
        if abs(self.don) > self.nod + _RTI_SLACK * (1.0 + self.nod):
            raise DataError(
                f"sample {self.sample_id!r}: |don|={abs(self.don)} exceeds nod={self.nod}"
            )


@dataclass(frozen=True)
class LayerDelta:
    """Frobenius norms of one layer before/after training, and how far it moved."""

    layer_name: str
    norm_before: float
    norm_after: float
    nod: float

    def __post_init__(self):
        if abs(self.norm_before - self.norm_after) > self.nod + _RTI_SLACK * (1.0 + self.nod):
            raise DataError(
                f"layer {self.layer_name!r}: |norm gap| exceeds displacement {self.nod}"
            )

    @property
    def norm_gap(self) -> float:
        """The signed norm change, logged alongside the displacement."""
        return self.norm_before - self.norm_after


@dataclass(frozen=True)
class SkippedSample:
    sample_id: str
    reason: str


@dataclass(frozen=True)
class ScoreResult:
    metrics: tuple[SampleMetrics, ...]
    skipped: tuple[SkippedSample, ...]

    def by_id(self) -> dict[str, SampleMetrics]:
        return {m.sample_id: m for m in self.metrics}


def don(w_before: Matrix, w_after: Matrix) -> float:
    if w_before.shape != w_after.shape:
        raise ShapeMismatch(f"don: shapes differ: {w_before.shape} vs {w_after.shape}")
    return frobenius_norm(w_before) - frobenius_norm(w_after)


def nod(w_before: Matrix, w_after: Matrix) -> float:
    return frobenius_norm(sub(w_before, w_after))


def score_dataset(
    model: ProbeModel,
    cfg: ProbeConfig,
    samples: Sequence[SampleRecord],
    probe_tag: str | None = None,
) -> ScoreResult:
    """Probe every sample and collect its metrics.

    Samples whose probe fails are recorded in the skip list with the
    failure reason rather than given sentinel scores; the call only fails
    outright when nothing at all could be scored. Results are assembled in
    sample-id order so output does not depend on input order.
    """
    if probe_tag is None:
        model_tag = getattr(model, "tag", type(model).__name__.lower())
        probe_tag = f"{model_tag}|lr={cfg.learning_rate:g}|{cfg.loss_scope}"
    metrics: list[SampleMetrics] = []
    skipped: list[SkippedSample] = []
    for sample in samples:
        try:
            w_before, w_after = probe_step(model, cfg, sample)
        except DataError as e:
            skipped.append(SkippedSample(sample_id=sample.sample_id, reason=str(e)))
            continue
        metrics.append(
            SampleMetrics(
                sample_id=sample.sample_id,
                don=don(w_before, w_after),
                nod=nod(w_before, w_after),
                lr=cfg.learning_rate,
                probe_tag=probe_tag,
            )
        )
    if samples and not metrics:
        raise NoScoreableSamples(
            f"no scoreable samples: all {len(samples)} failed "
            f"(first: {skipped[0].sample_id}: {skipped[0].reason})"
        )
    metrics.sort(key=lambda m: m.sample_id)
    skipped.sort(key=lambda s: s.sample_id)
    return ScoreResult(metrics=tuple(metrics), skipped=tuple(skipped))


def rank_layers(layers: Sequence[tuple[str, Matrix, Matrix]]) -> list[LayerDelta]:
    """LayerDeltas sorted by displacement, largest first; ties keep input order."""
    deltas = []
    for name, before, after in layers:
        if before.shape != after.shape:
            raise ShapeMismatch(
                f"layer {name!r}: shapes differ: {before.shape} vs {after.shape}"
            )
        deltas.append(
            LayerDelta(
                layer_name=name,
                norm_before=frobenius_norm(before),
                norm_after=frobenius_norm(after),
                nod=nod(before, after),
            )
        )
    return sorted(deltas, key=lambda d: -d.nod)


# -- metrics file (JSON lines, one object per sample) --------------------


def metrics_to_line(m: SampleMetrics) -> str:
    return (
        "{"
        f'"sample_id": {json.dumps(m.sample_id, ensure_ascii=False)}, '
        f'"don": {fmt17(m.don)}, '
        f'"nod": {fmt17(m.nod)}, '
        f'"lr": {fmt17(m.lr)}, '
        f'"probe_tag": {json.dumps(m.probe_tag, ensure_ascii=False)}'
        "}"
    )


def metrics_to_text(metrics: Sequence[SampleMetrics]) -> str:
    return "".join(metrics_to_line(m) + "\n" for m in metrics)


def write_metrics(path, metrics: Sequence[SampleMetrics]) -> None:
    atomic_write_text(path, metrics_to_text(metrics))


def read_metrics(path) -> list[SampleMetrics]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise IoError(f"cannot read metrics {path!r}: {e}") from e
    out = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(
                SampleMetrics(
                    sample_id=obj["sample_id"],
                    don=float(obj["don"]),
                    nod=float(obj["nod"]),
                    lr=float(obj["lr"]),
                    probe_tag=str(obj.get("probe_tag", "")),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: bad metrics line {lineno}: {e}") from e
    return out
