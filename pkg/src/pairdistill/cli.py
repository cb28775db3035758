"""Command line entry point.

Each subcommand is one pipeline stage that reads its inputs from files in the
output directory and writes its own artifacts there::

    synth         run.txt qrels.txt features.tsv
    sample        split.tsv pairs.tsv
    judge         judgments.jsonl (or pointwise.tsv) judge_stats.json
    train         checkpoint.txt trainlog.csv
    rank          student_run.txt
    eval          metrics.csv
    prp-baseline  prp_run.txt prp_stats.json
    sweep         sweep.csv (judgments cached in judgments.jsonl)

Exit codes: 0 ok, 2 config error, 3 missing input, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .corpus import (
    CandidateSet,
    Dataset,
    DatasetSplit,
    generate_synthetic,
    make_split,
    parse_features,
    parse_qrels,
    parse_trec_run,
    write_features,
    write_qrels,
    write_trec_run,
)
from .evaluation import evaluate_run, sweep_report
from .pipeline import aggregated_labels, pair_labels, run_cell
from .prp import prp_scores, rank_by_scores
from .sampling import Budget, parse_pairs, sample_pairs_for_query, write_pairs
from .student import load_checkpoint, predict_run, save_checkpoint, train
from .teacher import JudgmentStore, judge_pairs, make_teacher

logger = logging.getLogger("pairdistill")

EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 2, 3, 4


class MissingInput(FileNotFoundError):
    pass


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingInput(f"missing input {path} (run the '{stage}' stage first)")
    return path


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _data_paths(cfg: ExperimentConfig) -> tuple[Path, Path, Path]:
    if cfg.get("data.source") == "files":
        return Path(cfg.get("data.run")), Path(cfg.get("data.qrels")), Path(cfg.get("data.features"))
    return cfg.out / "run.txt", cfg.out / "qrels.txt", cfg.out / "features.tsv"


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    run, qrels, feats = (_require(p, "synth") for p in _data_paths(cfg))
    with open(run, encoding="utf-8") as fh:
        candidates = {cs.query: cs for cs in parse_trec_run(fh)}
    with open(qrels, encoding="utf-8") as fh:
        judgments = parse_qrels(fh)
    with open(feats, encoding="utf-8") as fh:
        features = parse_features(fh)
    return Dataset(candidates, judgments, features)


def load_split(cfg: ExperimentConfig) -> DatasetSplit:
    parts: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    for line in _require(cfg.out / "split.tsv", "sample").read_text(encoding="utf-8").splitlines():
        if line.strip():
            q, part = line.split("\t")
            parts[part].append(q)
    return DatasetSplit(parts["train"], parts["validation"], parts["test"])


def _teacher(cfg: ExperimentConfig, dataset: Dataset, store: JudgmentStore | None = None):
    spec = cfg.teacher_spec
    if spec.kind == "remote":
        return make_teacher(spec, **cfg.remote_options)
    return make_teacher(spec, dataset.qrels, store)


def _store(cfg: ExperimentConfig) -> JudgmentStore:
    return JudgmentStore(cfg.out / "judgments.jsonl", cfg.teacher_spec.tie_threshold)


# -- stages ----------------------------------------------------------------------


def cmd_synth(cfg: ExperimentConfig):
    if cfg.get("data.source") != "synthetic":
        raise ConfigError("synth needs data.source=synthetic")
    ds = generate_synthetic(cfg.synthetic_spec, cfg.seed)
    run, qrels, feats = _data_paths(cfg)
    _write(run, write_trec_run(ds.candidates.values(), "initial"))
    _write(qrels, write_qrels(ds.qrels))
    _write(feats, write_features(ds.features))
    print(f"wrote {len(ds.candidates)} queries, {len(ds.features)} feature vectors to {cfg.out}")


def cmd_sample(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = make_split(ds.queries, cfg.split_ratios, cfg.seed)
    lines = []
    for part in ("train", "validation", "test"):
        lines.extend(f"{q}\t{part}\n" for q in sorted(getattr(split, part)))
    _write(cfg.out / "split.tsv", "".join(lines))
    sampled = [sample_pairs_for_query(ds.candidates[q], cfg.strategy, cfg.budget, cfg.seed) for q in sorted(split.train)]
    _write(cfg.out / "pairs.tsv", write_pairs(sampled))
    print(f"sampled {sum(len(s) for s in sampled)} ordered pairs over {len(sampled)} training queries")


def _read_pairs(cfg: ExperimentConfig, ds: Dataset) -> dict[str, list[tuple[str, str]]]:
    return parse_pairs(_require(cfg.out / "pairs.tsv", "sample").read_text(encoding="utf-8"), ds.candidates)


def _read_pointwise(path: Path) -> dict[tuple[str, str], float]:
    scores = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                q, d, s = line.split("\t")
                scores[(q, d)] = float(s)
    return scores


def cmd_judge(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = load_split(cfg)
    if cfg.train_config.loss == "pointwise_mse":
        path = cfg.out / "pointwise.tsv"
        cached = _read_pointwise(path)
        teacher = _teacher(cfg, ds)
        for q in sorted(split.train):
            for d in ds.candidates[q].docs:
                if (q, d) not in cached:
                    cached[(q, d)] = teacher.pointwise_score(q, d)
        _write(path, "".join(f"{q}\t{d}\t{s!r}\n" for (q, d), s in sorted(cached.items())))
        calls, judged = teacher.calls, len(cached)
    else:
        store = _store(cfg)
        teacher = _teacher(cfg, ds, store)
        pairs = _read_pairs(cfg, ds)
        try:
            for q in sorted(pairs):
                judge_pairs(teacher, q, pairs[q], store, cfg.both_directions, return_judgments=False)
        finally:
            store.flush()
        calls, judged = teacher.calls, len(store)
    _write(cfg.out / "judge_stats.json", json.dumps({"teacher_calls": calls, "stored": judged}) + "\n")
    print(f"teacher calls: {calls} (store holds {judged})")


def cmd_train(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = load_split(cfg)
    tc = cfg.train_config
    if tc.loss == "pointwise_mse":
        labels = _read_pointwise(_require(cfg.out / "pointwise.tsv", "judge"))
    else:
        store = JudgmentStore(_require(cfg.out / "judgments.jsonl", "judge"), cfg.teacher_spec.tie_threshold)
        if cfg.aggregate:
            labels = aggregated_labels(ds, sorted(split.train), store)
        else:
            labels = pair_labels(ds, _read_pairs(cfg, ds), store, tc.label_mode)
    params, log = train(ds, labels, split, cfg.model_spec(ds.features.dim), tc)
    save_checkpoint(params, cfg.out / "checkpoint.txt")
    _write(cfg.out / "trainlog.csv", log.to_csv())
    print(f"trained {len(log)} epochs, best epoch {log.best_epoch}")


def cmd_rank(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = load_split(cfg)
    params = load_checkpoint(_require(cfg.out / "checkpoint.txt", "train"))
    rankings = predict_run(params, ds, sorted(split.test))
    run = [CandidateSet(q, tuple(r)) for q, r in rankings.items()]
    _write(cfg.out / "student_run.txt", write_trec_run(run, "student"))
    print(f"ranked {len(run)} test queries")


def cmd_eval(cfg: ExperimentConfig):
    run_path = Path(cfg.get("eval.run")) if cfg.get("eval.run") else cfg.out / "student_run.txt"
    with open(_require(run_path, "rank"), encoding="utf-8") as fh:
        run = parse_trec_run(fh)
    with open(_require(_data_paths(cfg)[1], "synth"), encoding="utf-8") as fh:
        qrels = parse_qrels(fh)
    report = evaluate_run({cs.query: list(cs.entries) for cs in run}, qrels, cfg.metrics)
    _write(cfg.out / "metrics.csv", report.to_csv())
    print(" ".join(f"{m}={v if v is None else round(v, 4)}" for m, v in report.means.items()))


def cmd_prp_baseline(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = load_split(cfg)
    teacher = _teacher(cfg, ds)
    run = []
    for q in sorted(split.test):
        cs = ds.candidates[q]
        scores = prp_scores(teacher, cs)
        run.append(CandidateSet(q, tuple(rank_by_scores(scores, cs))))
    _write(cfg.out / "prp_run.txt", write_trec_run(run, "prp"))
    _write(cfg.out / "prp_stats.json", json.dumps({"teacher_calls": teacher.calls, "queries": len(run)}) + "\n")
    print(f"PRP baseline: {teacher.calls} teacher calls over {len(run)} queries")


def cmd_sweep(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    split = make_split(ds.queries, cfg.split_ratios, cfg.seed)
    strategies, budgets, seeds = cfg.sweep_grid
    store = _store(cfg)
    teacher = _teacher(cfg, ds, store)
    tc = cfg.train_config
    results = {}
    out = cfg.out / "sweep.csv"
    for seed in seeds:
        for strategy in strategies:
            for budget in budgets:
                cell = (strategy, budget, seed)
                try:
                    r = run_cell(
                        ds, split, teacher, store,
                        strategy=strategy, budget=Budget.parse(budget), seed=seed,
                        model_spec=cfg.model_spec(ds.features.dim), config=tc,
                        both_directions=cfg.both_directions,
                    )
                except Exception as exc:
                    store.flush()
                    if results:
                        _write(out, sweep_report(results))
                    raise RuntimeError(f"sweep cell strategy={strategy} budget={budget} seed={seed} failed: {exc}") from exc
                results[cell] = r.as_row()
                store.flush()
                _write(out, sweep_report(results))
                logger.info("cell %s: opa=%s calls=%d", cell, r.opa, r.teacher_calls)
    print(f"wrote {len(results)} cells to {out}")


COMMANDS = {
    "synth": cmd_synth,
    "sample": cmd_sample,
    "judge": cmd_judge,
    "train": cmd_train,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "prp-baseline": cmd_prp_baseline,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairdistill", description="Pairwise ranking distillation pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out is not None:
            overrides["out"] = args.out
        cfg = ExperimentConfig.load(args.config, overrides)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
