"""Batch command-line surface.

Commands: score, select, rank-layers, noise-exp, quality-exp, report.
Every command resolves its settings from built-in defaults, then an
optional JSON config file (--config), then explicit flags (flags win),
and writes the resolved snapshot as run_config.json next to its outputs.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback

from . import dataset as ds
from . import harness, metrics as metrics_mod, report as report_mod, select as select_mod
from .errors import (
    DataError,
    DonodError,
    IoError,
    MissingMetrics,
    NoScoreableSamples,
    UsageError,
)
from .ioutil import atomic_write_text, dumps17
from .probe import BYTE_VOCAB_SIZE, ProbeConfig, TinyLM, load_snapshot_pair

METHOD_ALIASES = {
    "topsis": "topsis",
    "don": "don_only",
    "don_only": "don_only",
    "nod": "nod_only",
    "nod_only": "nod_only",
    "wsum": "weighted_sum",
    "weighted_sum": "weighted_sum",
    "pareto": "pareto",
    "random": "random",
}

_PROBE_KEYS = (
    "seed", "lr", "max_seq_len", "loss_scope", "vocab_size", "hidden_dim",
    "context_window", "warm_epochs", "warm_lr",
)

_COMMON_PROBE_DEFAULTS = {
    "seed": 0,
    "lr": 2e-5,
    "max_seq_len": 256,
    "loss_scope": "response_only",
    "vocab_size": BYTE_VOCAB_SIZE,
    "hidden_dim": 32,
    "context_window": 4,
    "warm_epochs": 0,
    "warm_lr": harness.DEFAULT_WARM_LR,
}

DEFAULTS = {
    "score": {
        "dataset": None,
        "out": None,
        "force": False,
        **_COMMON_PROBE_DEFAULTS,
    },
    "select": {
        "dataset": None,
        "metrics": None,
        "out": None,
        "method": "topsis",
        "ratio": None,
        "reverse": False,
        "weight": 0.5,
        "seed": 0,
    },
    "rank-layers": {
        "layer": None,
        "out": None,
    },
    "noise-exp": {
        "dataset": None,
        "out": None,
        "ratio": 0.2,
        "mask_prob": harness.DEFAULT_MASK_PROB,
        "mask_token": harness.DEFAULT_MASK_TOKEN,
        "synthetic_n": 600,
        "noise_frac": 0.3,
        **{**_COMMON_PROBE_DEFAULTS, "warm_epochs": harness.DEFAULT_WARM_EPOCHS},
    },
    "quality-exp": {
        "dataset": None,
        "out": None,
        "methods": "topsis,random",
        "ratio": 0.2,
        "seeds": "1,2,3,4,5",
        "weight": 0.5,
        "heldout_frac": 0.25,
        "train_epochs": harness.DEFAULT_TRAIN_EPOCHS,
        "train_lr": harness.DEFAULT_TRAIN_LR,
        "synthetic_n": 600,
        "noise_frac": 0.3,
        **{**_COMMON_PROBE_DEFAULTS, "warm_epochs": harness.DEFAULT_WARM_EPOCHS},
    },
    "report": {
        "metrics": None,
        "selection": None,
        "out": None,
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_probe_flags(p):
    p.add_argument("--seed", type=int, help="base seed for model init and RNG streams")
    p.add_argument("--lr", type=float, help="probe learning rate (default 2e-5)")
    p.add_argument("--max-seq-len", type=int, dest="max_seq_len")
    p.add_argument("--loss-scope", dest="loss_scope",
                   choices=["response_only", "full_sequence"])
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--context-window", type=int, dest="context_window")
    p.add_argument("--warm-epochs", type=int, dest="warm_epochs",
                   help="output-layer warmup epochs before probing")
    p.add_argument("--warm-lr", type=float, dest="warm_lr")


def build_parser() -> _Parser:
    parser = _Parser(prog="donod", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--json-errors", action="store_true",
                        help="emit errors as one JSON object on stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="probe every sample and write DON/NOD metrics")
    p.add_argument("--dataset", help="input JSONL dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--force", action="store_true", default=None,
                   help="re-probe even when the metrics cache is fresh")
    _add_probe_flags(p)

    p = sub.add_parser("select", help="rank scored samples and write the pruned subset")
    p.add_argument("--dataset", help="input JSONL dataset")
    p.add_argument("--metrics", help="metrics JSONL produced by `score`")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")
    p.add_argument("--method", choices=sorted(METHOD_ALIASES),
                   help="ranking method (default topsis)")
    p.add_argument("--ratio", type=float, help="fraction of the dataset to keep")
    p.add_argument("--reverse", action="store_true", default=None,
                   help="keep the worst-ranked slice instead (reverse selection)")
    p.add_argument("--weight", type=float, help="DON weight for --method wsum")
    p.add_argument("--seed", type=int, help="seed for --method random")

    p = sub.add_parser("rank-layers", help="rank weight snapshots by Frobenius delta")
    p.add_argument("--layer", action="append",
                   help="NAME=BEFORE,AFTER pair of DNLW files (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")

    p = sub.add_parser("noise-exp", help="noise-injection robustness experiment")
    p.add_argument("--dataset", help="JSONL dataset (omit to use the synthetic corpus)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")
    p.add_argument("--ratio", type=float, help="selection ratio (default 0.2)")
    p.add_argument("--mask-prob", type=float, dest="mask_prob")
    p.add_argument("--mask-token", dest="mask_token")
    p.add_argument("--synthetic-n", type=int, dest="synthetic_n")
    p.add_argument("--noise-frac", type=float, dest="noise_frac")
    _add_probe_flags(p)

    p = sub.add_parser("quality-exp", help="subset-quality comparison across methods")
    p.add_argument("--dataset", help="JSONL dataset (omit to use the synthetic corpus)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")
    p.add_argument("--methods", help="comma-separated methods (default topsis,random)")
    p.add_argument("--ratio", type=float)
    p.add_argument("--seeds", help="comma-separated experiment seeds")
    p.add_argument("--weight", type=float)
    p.add_argument("--heldout-frac", type=float, dest="heldout_frac")
    p.add_argument("--train-epochs", type=int, dest="train_epochs")
    p.add_argument("--train-lr", type=float, dest="train_lr")
    p.add_argument("--synthetic-n", type=int, dest="synthetic_n")
    p.add_argument("--noise-frac", type=float, dest="noise_frac")
    _add_probe_flags(p)

    p = sub.add_parser("report", help="render scatter/score figures from metrics")
    p.add_argument("--metrics", help="metrics JSONL")
    p.add_argument("--selection", help="selection.json to take selected ids from")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")

    return parser


# -- settings resolution -----------------------------------------------------


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read config {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path!r} is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise UsageError(f"config {path!r} must be a JSON object")
    return obj


def resolve_settings(command: str, args) -> dict:
    defaults = DEFAULTS[command]
    config = _load_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(config) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {unknown}")
    settings = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        settings[key] = value
    return settings


def _require(settings, *keys):
    for key in keys:
        if settings[key] is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _as_int_list(value) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


def _as_method_list(value) -> list[str]:
    names = value if isinstance(value, (list, tuple)) else str(value).split(",")
    out = []
    for name in names:
        name = name.strip()
        if not name:
            continue
        if name not in METHOD_ALIASES:
            raise UsageError(f"unknown method {name!r}; expected one of {sorted(METHOD_ALIASES)}")
        out.append(METHOD_ALIASES[name])
    if not out:
        raise UsageError("no methods given")
    return out


def _probe_config(settings) -> ProbeConfig:
    return ProbeConfig(
        learning_rate=settings["lr"],
        max_seq_len=settings["max_seq_len"],
        loss_scope=settings["loss_scope"],
        seed=settings["seed"],
    )


def _probe_model(settings) -> TinyLM:
    return TinyLM(
        vocab_size=settings["vocab_size"],
        hidden_dim=settings["hidden_dim"],
        context_window=settings["context_window"],
        seed=settings["seed"],
    )


def _prepare_out(settings, command) -> str:
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    snapshot = {"command": command}
    snapshot.update({k: settings[k] for k in sorted(settings)})
    atomic_write_text(os.path.join(out, "run_config.json"), dumps17(snapshot, indent=2) + "\n")
    return out


def _sha256_file(path) -> str:
    try:
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()
    except OSError as e:
        raise IoError(f"cannot read {path!r}: {e}") from e


def _ingest(path) -> ds.IngestResult:
    result = ds.ingest_dataset(path)
    if not result.records:
        raise NoScoreableSamples(f"no scoreable samples: dataset {path!r} has no valid records")
    return result


# -- commands -----------------------------------------------------------------


def cmd_score(args) -> int:
    settings = resolve_settings("score", args)
    _require(settings, "dataset", "out")
    out = _prepare_out(settings, "score")
    metrics_path = os.path.join(out, "metrics.jsonl")
    meta_path = os.path.join(out, "metrics.meta.json")

    probe_fingerprint = hashlib.sha256(
        dumps17({k: settings[k] for k in _PROBE_KEYS}).encode()
    ).hexdigest()
    dataset_digest = _sha256_file(settings["dataset"])

    if not settings["force"] and os.path.exists(meta_path) and os.path.exists(metrics_path):
        try:
            with open(meta_path, "r", encoding="utf-8") as fh:
                meta = json.load(fh)
        except (OSError, json.JSONDecodeError):
            meta = {}
        if (
            meta.get("dataset_sha256") == dataset_digest
            and meta.get("probe_sha256") == probe_fingerprint
        ):
            print(f"cache hit: {metrics_path} is up to date (0 probe gradient evaluations)")
            return 0

    ingest = _ingest(settings["dataset"])
    model = _probe_model(settings)
    cfg = _probe_config(settings)
    if settings["warm_epochs"] > 0:
        model = harness.warm_probe(
            model, ingest.records, cfg,
            epochs=settings["warm_epochs"], lr=settings["warm_lr"],
        )
    calls_before = model.gradient_calls
    result = metrics_mod.score_dataset(model, cfg, ingest.records)
    metrics_mod.write_metrics(metrics_path, result.metrics)
    skip_doc = {
        "malformed_lines": [
            {"lineno": m.lineno, "reason": m.reason} for m in ingest.malformed
        ],
        "skipped_samples": [
            {"sample_id": s.sample_id, "reason": s.reason} for s in result.skipped
        ],
    }
    atomic_write_text(os.path.join(out, "skips.json"), dumps17(skip_doc, indent=2) + "\n")
    atomic_write_text(
        meta_path,
        dumps17(
            {
                "dataset_sha256": dataset_digest,
                "probe_sha256": probe_fingerprint,
                "n_samples": len(result.metrics),
            },
            indent=2,
        )
        + "\n",
    )
    print(
        f"scored {len(result.metrics)} samples "
        f"({len(result.skipped)} skipped, {len(ingest.malformed)} malformed lines, "
        f"{model.gradient_calls - calls_before} probe gradient evaluations) -> {metrics_path}"
    )
    return 0


def _covered_dataset(records, metrics_path):
    """Records that have metrics; probe-skipped ids are tolerated, others fatal."""
    all_metrics = metrics_mod.read_metrics(metrics_path)
    by_id = {m.sample_id: m for m in all_metrics}
    covered = [r for r in records if r.sample_id in by_id]
    uncovered = [r.sample_id for r in records if r.sample_id not in by_id]
    if uncovered:
        skipped_ids = set()
        skips_path = os.path.join(os.path.dirname(metrics_path) or ".", "skips.json")
        if os.path.exists(skips_path):
            try:
                with open(skips_path, "r", encoding="utf-8") as fh:
                    skip_doc = json.load(fh)
                skipped_ids = {s["sample_id"] for s in skip_doc.get("skipped_samples", [])}
            except (OSError, json.JSONDecodeError, KeyError, TypeError):
                skipped_ids = set()
        hard = [sid for sid in uncovered if sid not in skipped_ids]
        if hard:
            raise MissingMetrics(
                f"metrics at {metrics_path!r} do not cover {len(hard)} dataset ids "
                f"(first: {hard[:5]})",
                missing_ids=hard,
            )
    if not covered:
        raise DataError("no dataset sample has metrics; nothing to rank")
    return covered, [by_id[r.sample_id] for r in covered], uncovered


def cmd_select(args) -> int:
    settings = resolve_settings("select", args)
    _require(settings, "dataset", "metrics", "out", "ratio")
    out = _prepare_out(settings, "select")
    ingest = _ingest(settings["dataset"])
    covered, covered_metrics, excluded = _covered_dataset(ingest.records, settings["metrics"])
    method = METHOD_ALIASES[settings["method"]]
    cm = select_mod.CriterionMatrix.from_metrics(covered_metrics)
    sel = select_mod.make_selection(
        cm,
        method,
        settings["ratio"],
        weight=settings["weight"],
        seed=settings["seed"],
        reverse=bool(settings["reverse"]),
    )
    atomic_write_text(
        os.path.join(out, "selection.json"),
        dumps17(select_mod.selection_report(sel), indent=2) + "\n",
    )
    chosen = set(sel.selected_ids)
    pruned = [r for r in covered if r.sample_id in chosen]
    ds.write_dataset(os.path.join(out, "pruned.jsonl"), pruned)
    note = f" ({len(excluded)} unscored ids excluded)" if excluded else ""
    print(
        f"{method}: selected {len(sel.selected_ids)} of {cm.n} samples"
        f"{' (reverse)' if settings['reverse'] else ''}{note} -> {out}/pruned.jsonl"
    )
    return 0


def cmd_rank_layers(args) -> int:
    settings = resolve_settings("rank-layers", args)
    _require(settings, "layer", "out")
    out = _prepare_out(settings, "rank-layers")
    layers = []
    specs = settings["layer"]
    if isinstance(specs, str):
        specs = [specs]
    for spec in specs:
        if "=" not in spec:
            raise UsageError(f"--layer expects NAME=BEFORE,AFTER, got {spec!r}")
        name, _, paths = spec.partition("=")
        parts = paths.split(",")
        if len(parts) != 2:
            raise UsageError(f"--layer {name!r}: expected two comma-separated paths")
        before, after = load_snapshot_pair(parts[0].strip(), parts[1].strip())
        layers.append((name.strip(), before, after))
    deltas = metrics_mod.rank_layers(layers)
    doc = {
        "layers": [
            {
                "layer_name": d.layer_name,
                "norm_before": d.norm_before,
                "norm_after": d.norm_after,
                "nod": d.nod,
                "norm_gap": d.norm_gap,
            }
            for d in deltas
        ]
    }
    atomic_write_text(os.path.join(out, "layers.json"), dumps17(doc, indent=2) + "\n")
    report_mod.write_layers_csv(os.path.join(out, "layers.csv"), deltas)
    report_mod.plot_layer_deltas(os.path.join(out, "layers.png"), deltas)
    width = max(len(d.layer_name) for d in deltas)
    print(f"{'layer':<{width}}  {'nod':>14}  {'norm_before':>14}  {'norm_after':>14}")
    for d in deltas:
        print(f"{d.layer_name:<{width}}  {d.nod:>14.6g}  {d.norm_before:>14.6g}  {d.norm_after:>14.6g}")
    return 0


def _experiment_inputs(settings):
    """(train, heldout_or_None, warmup, cfg, warmed probe model) for experiments."""
    cfg = _probe_config(settings)
    if settings["dataset"]:
        records = list(_ingest(settings["dataset"]).records)
        train, heldout = harness.split_heldout(records, settings.get("heldout_frac", 0.25), cfg.seed)
        warmup = train
    else:
        bundle = harness.make_corpus(
            n_train=settings["synthetic_n"],
            noise_frac=settings["noise_frac"],
            seed=settings["seed"],
        )
        train, heldout, warmup = list(bundle.train), list(bundle.heldout), list(bundle.warmup)
    model = _probe_model(settings)
    model = harness.warm_probe(
        model, warmup, cfg, epochs=settings["warm_epochs"], lr=settings["warm_lr"]
    )
    return train, heldout, cfg, model


def cmd_noise_exp(args) -> int:
    settings = resolve_settings("noise-exp", args)
    _require(settings, "out")
    out = _prepare_out(settings, "noise-exp")
    train, _, cfg, model = _experiment_inputs(settings)
    spec = harness.NoiseSpec(
        mask_prob=settings["mask_prob"],
        mask_token=settings["mask_token"],
        seed=settings["seed"],
    )
    rep = harness.noise_experiment(train, model, cfg, settings["ratio"], spec)
    atomic_write_text(
        os.path.join(out, "noise_report.json"),
        dumps17(report_mod.noise_report_doc(rep), indent=2) + "\n",
    )
    report_mod.write_nod_shift_csv(os.path.join(out, "nod_shift.csv"), rep)
    report_mod.plot_nod_shift(os.path.join(out, "nod_shift.png"), rep)
    print(
        f"overlap: {rep.overlap.overlap:.4f} "
        f"({rep.overlap.intersection} of {rep.overlap.set_a_size} originally selected)\n"
        f"mean NOD of corrupted samples: {rep.mean_nod_clean:.6g} -> "
        f"{rep.mean_nod_corrupted:.6g} (shift {rep.mean_nod_shift:+.6g})"
    )
    return 0


def cmd_quality_exp(args) -> int:
    settings = resolve_settings("quality-exp", args)
    _require(settings, "out")
    out = _prepare_out(settings, "quality-exp")
    train, heldout, cfg, model = _experiment_inputs(settings)
    methods = _as_method_list(settings["methods"])
    seeds = _as_int_list(settings["seeds"])
    rep = harness.subset_quality_experiment(
        train,
        model,
        cfg,
        methods,
        settings["ratio"],
        seeds,
        heldout=heldout,
        weight=settings["weight"],
        train_epochs=settings["train_epochs"],
        train_lr=settings["train_lr"],
    )
    atomic_write_text(
        os.path.join(out, "quality_report.json"),
        dumps17(report_mod.quality_report_doc(rep), indent=2) + "\n",
    )
    report_mod.write_quality_csv(os.path.join(out, "quality.csv"), rep)
    report_mod.write_quality_summary_csv(os.path.join(out, "quality_summary.csv"), rep)
    report_mod.plot_quality(os.path.join(out, "quality.png"), rep)
    for method in methods:
        s = rep.summary[method]
        print(f"{method}: held-out loss {s['mean']:.6g} +/- {s['std']:.3g} over {s['n_seeds']} seeds")
    return 0


def cmd_report(args) -> int:
    settings = resolve_settings("report", args)
    _require(settings, "metrics", "out")
    out = _prepare_out(settings, "report")
    all_metrics = metrics_mod.read_metrics(settings["metrics"])
    if not all_metrics:
        raise DataError(f"metrics file {settings['metrics']!r} is empty")
    cm = select_mod.CriterionMatrix.from_metrics(all_metrics)
    scores = dict(select_mod.topsis_scores(cm))
    selected = set()
    if settings["selection"]:
        try:
            with open(settings["selection"], "r", encoding="utf-8") as fh:
                sel_doc = json.load(fh)
            selected = set(sel_doc["selected_ids"])
        except OSError as e:
            raise IoError(f"cannot read selection {settings['selection']!r}: {e}") from e
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"bad selection file {settings['selection']!r}: {e}") from e
    rows = [
        harness.ScatterRow(
            sample_id=m.sample_id,
            don=m.don,
            nod=m.nod,
            topsis_score=scores[m.sample_id],
            selected=int(m.sample_id in selected),
        )
        for m in all_metrics
    ]
    report_mod.write_scatter_csv(os.path.join(out, "scatter.csv"), rows)
    report_mod.plot_scatter(os.path.join(out, "scatter.png"), rows)
    ordered = sorted(scores.values(), reverse=True)
    report_mod.plot_score_curve(os.path.join(out, "score_curve.png"), ordered)
    dons = [m.don for m in all_metrics]
    nods = [m.nod for m in all_metrics]
    summary = {
        "n_samples": len(all_metrics),
        "n_selected": len(selected),
        "don_min": min(dons), "don_mean": sum(dons) / len(dons), "don_max": max(dons),
        "nod_min": min(nods), "nod_mean": sum(nods) / len(nods), "nod_max": max(nods),
    }
    atomic_write_text(os.path.join(out, "summary.json"), dumps17(summary, indent=2) + "\n")
    print(f"report written for {len(all_metrics)} samples -> {out}")
    return 0


_COMMANDS = {
    "score": cmd_score,
    "select": cmd_select,
    "rank-layers": cmd_rank_layers,
    "noise-exp": cmd_noise_exp,
    "quality-exp": cmd_quality_exp,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    json_errors = False
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:  # --help
            return int(e.code or 0)
        json_errors = bool(getattr(args, "json_errors", False))
        return _COMMANDS[args.command](args)
    except DonodError as e:
        if json_errors:
            print(dumps17({
                "error": type(e).__name__,
                "message": str(e),
                "exit_code": e.exit_code,
            }))
        else:
            print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        traceback.print_exc()
        return 3


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
