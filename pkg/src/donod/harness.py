"""Desk-scale diagnostic experiments.

Two protocols are reproduced here against the bundled TinyLM probe:

* noise robustness: select the top slice of a dataset, corrupt exactly
  those samples by masking words in their responses, re-score, and
  measure how much of the original selection survives and how far the
  displacement metric (NOD) of the corrupted samples moves;

* subset quality: select a slice per ranking method, fine-tune a fresh
  model on each slice with the same budget, and compare held-out
  cross-entropy.

Both need a probe model that has already learned something (a model at
random initialization reacts to clean and noisy samples alike), so the
experiments warm the probe's output layer on the dataset first. The
synthetic corpus generator produces patterned instruction-response pairs
plus a controlled fraction of character-shuffled (unlearnable) responses,
giving the selector a real signal to find.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dataset import SampleRecord, strip_raw
from .errors import (
    DataError,
    EmptySelection,
    MissingMetrics,
    NoScoreableSamples,
    UnknownSampleId,
    UsageError,
)
from .metrics import SampleMetrics, score_dataset
from .probe import ProbeConfig, TinyLM, cross_entropy_loss
from .seeding import stable_rng, stable_seed
from .select import CriterionMatrix, make_selection, rank, select_top

DEFAULT_MASK_PROB = 0.15
DEFAULT_MASK_TOKEN = "<mask>"
DEFAULT_WARM_EPOCHS = 2
DEFAULT_WARM_LR = 0.25
DEFAULT_TRAIN_EPOCHS = 6
DEFAULT_TRAIN_LR = 0.25

_TOKEN_SPLIT = re.compile(r"(\s+)")


@dataclass(frozen=True)
class NoiseSpec:
    """How to corrupt responses: which samples, how hard, which mask."""

    mask_prob: float = DEFAULT_MASK_PROB
    mask_token: str = DEFAULT_MASK_TOKEN
    target_ids: frozenset = frozenset()
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.mask_prob <= 1.0):
            raise UsageError(f"mask_prob must be in [0, 1], got {self.mask_prob!r}")
        object.__setattr__(self, "target_ids", frozenset(self.target_ids))


@dataclass(frozen=True)
class OverlapReport:
    set_a_size: int
    set_b_size: int
    intersection: int
    overlap: float


def inject_noise(samples: Sequence[SampleRecord], spec: NoiseSpec) -> list[SampleRecord]:
    """Mask words in the responses of the targeted samples.

    Each whitespace-delimited token of a targeted response is replaced by
    the mask token independently with probability mask_prob, using an RNG
    stream keyed by (seed, sample_id): the corruption of one sample never
    depends on dataset order. Non-targeted samples pass through untouched.
    """
    known = {s.sample_id for s in samples}
    unknown = sorted(spec.target_ids - known)
    if unknown:
        raise UnknownSampleId(f"noise targets not in dataset: {unknown[:5]}")
    out = []
    for sample in samples:
        if sample.sample_id not in spec.target_ids:
            out.append(sample)
            continue
        rng = stable_rng(spec.seed, "mask", sample.sample_id)
        parts = _TOKEN_SPLIT.split(sample.response)
        for i, part in enumerate(parts):
            if part and not part.isspace():
                if rng.random() < spec.mask_prob:
                    parts[i] = spec.mask_token
        corrupted = "".join(parts)
        out.append(strip_raw(replace(sample, response=corrupted)))
    return out


def selection_overlap(a: Sequence[str], b: Sequence[str]) -> OverlapReport:
    """|A intersect B| / |A|, with A the original selection."""
    set_a, set_b = set(a), set(b)
    if not set_a:
        raise EmptySelection("overlap is undefined for an empty original selection")
    inter = len(set_a & set_b)
    return OverlapReport(
        set_a_size=len(set_a),
        set_b_size=len(set_b),
        intersection=inter,
        overlap=inter / len(set_a),
    )


# -- synthetic corpus -----------------------------------------------------

LEXICON = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
)

_TEMPLATES = ("repeat {a} then {b}", "say {a} and {b}")


@dataclass(frozen=True)
class CorpusBundle:
    """Train split (mixed clean/noise) plus clean held-out and warmup splits."""

    train: tuple[SampleRecord, ...]
    heldout: tuple[SampleRecord, ...]
    warmup: tuple[SampleRecord, ...]
    noise_ids: frozenset


def _clean_sample(rng: np.random.Generator, sample_id: str) -> SampleRecord:
    a, b = (LEXICON[i] for i in rng.integers(0, len(LEXICON), 2))
    template = _TEMPLATES[int(rng.integers(0, len(_TEMPLATES)))]
    return SampleRecord(
        sample_id=sample_id,
        instruction=template.format(a=a, b=b),
        response=f"{a} {b} {a} {b}",
    )


def _shuffle_chars(rng: np.random.Generator, text: str) -> str:
    chars = list(text)
    rng.shuffle(chars)
    return "".join(chars)


def make_corpus(
    n_train: int = 600,
    noise_frac: float = 0.3,
    seed: int = 0,
    n_heldout: int = 150,
    n_warmup: int = 150,
) -> CorpusBundle:
    """Seeded corpus of patterned pairs with a noise_frac of shuffled responses."""
    if not (0.0 <= noise_frac <= 1.0):
        raise UsageError(f"noise_frac must be in [0, 1], got {noise_frac!r}")
    rng = stable_rng(seed, "corpus-train")
    n_noise = round(noise_frac * n_train)
    noisy_slots = set(rng.permutation(n_train)[:n_noise].tolist())
    train = []
    noise_ids = []
    for i in range(n_train):
        sid = f"syn-{i:04d}"
        sample = _clean_sample(rng, sid)
        if i in noisy_slots:
            sample = replace(sample, response=_shuffle_chars(rng, sample.response))
            noise_ids.append(sid)
        train.append(sample)
    held_rng = stable_rng(seed, "corpus-heldout")
    heldout = tuple(_clean_sample(held_rng, f"held-{i:04d}") for i in range(n_heldout))
    warm_rng = stable_rng(seed, "corpus-warmup")
    warmup = tuple(_clean_sample(warm_rng, f"warm-{i:04d}") for i in range(n_warmup))
    return CorpusBundle(
        train=tuple(train),
        heldout=heldout,
        warmup=warmup,
        noise_ids=frozenset(noise_ids),
    )


# -- output-layer trainer --------------------------------------------------


def fine_tune(
    model: TinyLM,
    samples: Sequence[SampleRecord],
    cfg: ProbeConfig,
    *,
    epochs: int,
    lr: float,
    seed: int = 0,
) -> TinyLM:
    """Plain per-sample gradient descent on all TinyLM parameters.

    Returns a trained clone; the input model is untouched. The visit order
    is a seeded shuffle per epoch, so identical (samples, seed, budget)
    give bit-identical weights regardless of how the subset was chosen.
    """
    trained = model.clone()
    order_rng = stable_rng(seed, "train-order")
    idx = np.arange(len(samples))
    for _ in range(epochs):
        order_rng.shuffle(idx)
        for i in idx:
            try:
                grads = trained.full_gradients(samples[i], cfg)
            except DataError:
                continue
            trained.embed -= lr * grads["embed"]
            trained.mix_w -= lr * grads["mix_w"]
            trained.mix_b -= lr * grads["mix_b"]
            trained.w_out -= lr * grads["w_out"]
            trained.b_out -= lr * grads["b_out"]
    return trained


def warm_probe(
    model: TinyLM,
    samples: Sequence[SampleRecord],
    cfg: ProbeConfig,
    *,
    epochs: int = DEFAULT_WARM_EPOCHS,
    lr: float = DEFAULT_WARM_LR,
    seed: int | None = None,
) -> TinyLM:
    """Give a fresh probe model some exposure before it judges samples."""
    if epochs <= 0:
        return model
    if seed is None:
        seed = stable_seed(cfg.seed, "probe-warm")
    return fine_tune(model, samples, cfg, epochs=epochs, lr=lr, seed=seed)


def mean_heldout_loss(model: TinyLM, samples: Sequence[SampleRecord], cfg: ProbeConfig) -> float:
    losses = []
    for sample in samples:
        try:
            losses.append(cross_entropy_loss(model, sample, cfg))
        except DataError:
            continue
    if not losses:
        raise NoScoreableSamples("no held-out sample could be evaluated")
    return float(np.mean(losses))


# -- noise-robustness experiment -------------------------------------------


@dataclass(frozen=True)
class NoiseExperimentReport:
    overlap: OverlapReport
    clean_selected: tuple[str, ...]
    corrupted_selected: tuple[str, ...]
    nod_pairs: tuple[tuple[str, float, float], ...]
    mean_nod_clean: float
    mean_nod_corrupted: float
    mean_nod_shift: float
    missing_after_corruption: tuple[str, ...]


def noise_experiment(
    dataset: Sequence[SampleRecord],
    model,
    cfg: ProbeConfig,
    ratio: float,
    spec: NoiseSpec,
    *,
    method: str = "topsis",
) -> NoiseExperimentReport:
    """Corrupt the clean top slice, re-run selection, measure the fallout.

    spec.target_ids is ignored: the targets are exactly the clean
    selection, per protocol.
    """
    clean = score_dataset(model, cfg, dataset)
    clean_sel = make_selection(
        CriterionMatrix.from_metrics(clean.metrics), method, ratio
    )
    targets = frozenset(clean_sel.selected_ids)

    corrupted_dataset = inject_noise(dataset, replace(spec, target_ids=targets))
    corrupted = score_dataset(model, cfg, corrupted_dataset)
    corrupted_sel = make_selection(
        CriterionMatrix.from_metrics(corrupted.metrics), method, ratio
    )

    overlap = selection_overlap(clean_sel.selected_ids, corrupted_sel.selected_ids)
    clean_by_id = clean.by_id()
    corrupted_by_id = corrupted.by_id()
    pairs = []
    missing = []
    for sid in clean_sel.selected_ids:
        if sid in corrupted_by_id:
            pairs.append((sid, clean_by_id[sid].nod, corrupted_by_id[sid].nod))
        else:
            missing.append(sid)
    if not pairs:
        raise NoScoreableSamples("no corrupted sample survived re-scoring")
    nods_clean = float(np.mean([p[1] for p in pairs]))
    nods_corrupted = float(np.mean([p[2] for p in pairs]))
    return NoiseExperimentReport(
        overlap=overlap,
        clean_selected=tuple(clean_sel.selected_ids),
        corrupted_selected=tuple(corrupted_sel.selected_ids),
        nod_pairs=tuple(pairs),
        mean_nod_clean=nods_clean,
        mean_nod_corrupted=nods_corrupted,
        mean_nod_shift=nods_corrupted - nods_clean,
        missing_after_corruption=tuple(missing),
    )


# -- reverse (worst-first) selection ----------------------------------------


@dataclass(frozen=True)
class ScatterRow:
    sample_id: str
    don: float
    nod: float
    topsis_score: float
    selected: int


@dataclass(frozen=True)
class NodonResult:
    records: tuple[SampleRecord, ...]
    scatter: tuple[ScatterRow, ...]


def build_nodon_dataset(
    dataset: Sequence[SampleRecord],
    metrics: Sequence[SampleMetrics],
    ratio: float,
) -> NodonResult:
    """The bottom `ratio` slice under TOPSIS, worst first, plus scatter rows.

    The scatter export labels every dataset sample with its metrics, its
    TOPSIS score, and whether it landed in the reverse-selected subset.
    """
    by_id = {m.sample_id: m for m in metrics}
    missing = [r.sample_id for r in dataset if r.sample_id not in by_id]
    if missing:
        raise MissingMetrics(
            f"metrics missing for {len(missing)} samples (first: {missing[:5]})",
            missing_ids=missing,
        )
    cm = CriterionMatrix.from_metrics([by_id[r.sample_id] for r in dataset])
    ranking = rank(cm, "topsis")
    worst_first = select_top(ranking, ratio, reverse=True)
    chosen = set(worst_first)
    record_by_id = {r.sample_id: r for r in dataset}
    scores = dict(ranking)
    scatter = tuple(
        ScatterRow(
            sample_id=r.sample_id,
            don=by_id[r.sample_id].don,
            nod=by_id[r.sample_id].nod,
            topsis_score=scores[r.sample_id],
            selected=int(r.sample_id in chosen),
        )
        for r in dataset
    )
    return NodonResult(
        records=tuple(record_by_id[sid] for sid in worst_first),
        scatter=scatter,
    )


# -- subset-quality experiment ----------------------------------------------


@dataclass(frozen=True)
class QualityRow:
    method: str
    seed: int
    n_selected: int
    heldout_loss: float


@dataclass(frozen=True)
class QualityReport:
    rows: tuple[QualityRow, ...]
    summary: dict
    ratio: float

    def mean_loss(self, method: str) -> float:
        return self.summary[method]["mean"]


def split_heldout(dataset, fraction, seed):
    """Seeded train/held-out split; both halves keep their original order."""
    rng = stable_rng(seed, "quality-split")
    n_held = max(1, round(fraction * len(dataset)))
    held_idx = set(rng.permutation(len(dataset))[:n_held].tolist())
    train = [r for i, r in enumerate(dataset) if i not in held_idx]
    heldout = [r for i, r in enumerate(dataset) if i in held_idx]
    return train, heldout


def subset_quality_experiment(
    dataset: Sequence[SampleRecord],
    model: TinyLM,
    cfg: ProbeConfig,
    methods: Sequence[str],
    ratio: float,
    seeds: Sequence[int],
    *,
    heldout: Sequence[SampleRecord] | None = None,
    heldout_fraction: float = 0.25,
    weight: float = 0.5,
    train_epochs: int = DEFAULT_TRAIN_EPOCHS,
    train_lr: float = DEFAULT_TRAIN_LR,
) -> QualityReport:
    """Select a slice per method, train a fresh model on it, compare losses.

    The per-seed evaluation model and its training order are shared across
    methods, so identical subsets always give identical losses and any
    difference is attributable to the selection.
    """
    if not methods:
        raise UsageError("at least one method is required")
    if not seeds:
        raise UsageError("at least one seed is required")
    if heldout is None:
        dataset, heldout = split_heldout(dataset, heldout_fraction, cfg.seed)
    scored = score_dataset(model, cfg, dataset)
    cm = CriterionMatrix.from_metrics(scored.metrics)
    scoreable = {m.sample_id for m in scored.metrics}
    pool = [r for r in dataset if r.sample_id in scoreable]

    rows = []
    for seed in seeds:
        eval_init = TinyLM(
            vocab_size=model.vocab_size,
            hidden_dim=model.hidden_dim,
            context_window=model.context_window,
            seed=stable_seed(seed, "quality-init"),
        )
        order_seed = stable_seed(seed, "quality-train-order")
        for method in methods:
            sel = make_selection(cm, method, ratio, weight=weight, seed=seed)
            chosen = set(sel.selected_ids)
            subset = [r for r in pool if r.sample_id in chosen]
            trained = fine_tune(
                eval_init, subset, cfg, epochs=train_epochs, lr=train_lr, seed=order_seed
            )
            rows.append(
                QualityRow(
                    method=method,
                    seed=seed,
                    n_selected=len(subset),
                    heldout_loss=mean_heldout_loss(trained, heldout, cfg),
                )
            )
    summary = {}
    for method in methods:
        losses = [r.heldout_loss for r in rows if r.method == method]
        mean = float(np.mean(losses))
        std = float(np.std(losses, ddof=1)) if len(losses) > 1 else 0.0
        summary[method] = {"mean": mean, "std": std, "n_seeds": len(losses)}
    return QualityReport(rows=tuple(rows), summary=summary, ratio=ratio)
