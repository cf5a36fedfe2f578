"""Command-line pipeline: generate, build, label, train, evaluate, select."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .config import RunConfig
from .labeling import compute_scene_labels, scene_candidates
from .oracle import MetricVector, aggregate_report, eval_all, final_score
from .scenegen import generate_scene
from .scorer import ScorerModel, TrainConfig, evaluate_scorer, train
from .selection import select
from .vocabulary import build_vocabulary


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in ("count", "seed", "m", "d", "epochs", "batch_size", "learning_rate", "jobs"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    return cfg.with_overrides(**overrides)


def _scene_filename(scene_id: str) -> str:
    return f"{scene_id}.json"


def _gen_one(payload):
    cfg_doc, index, out_dir = payload
    cfg = RunConfig.from_document(cfg_doc)
    scene = generate_scene(cfg.scene, index)
    rel = Path("scenes") / _scene_filename(scene.scene_id)
    formats.write_scene(Path(out_dir) / rel, scene)
    return str(rel)


def cmd_scenes_generate(args) -> int:
    cfg = _load_config(args)
    scene_cfg_doc = cfg.to_document()["scene"]
    scene_cfg_doc["seed"] = cfg.seed
    cfg = cfg.with_overrides(scene=scene_cfg_doc)
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    payloads = [(cfg.to_document(), i, str(out)) for i in range(cfg.count)]
    if cfg.jobs > 1 and payloads:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rels = list(pool.map(_gen_one, payloads))
    else:
        rels = [_gen_one(p) for p in payloads]
    formats.write_manifest(out / "manifest.json", cfg.to_document()["scene"], rels)
    print(f"wrote {len(rels)} scenes to {out}")
    return 0


def cmd_vocab_build(args) -> int:
    cfg = _load_config(args)
    scenes = formats.read_corpus(args.experts)
    experts = [s.expert for s in scenes]
    vocab = build_vocabulary(experts, cfg.m, seed=cfg.seed, restarts=cfg.restarts, max_iters=cfg.max_iters)
    formats.write_vocabulary(args.out, vocab)
    print(f"built vocabulary m={vocab.size} inertia={vocab.build_meta['inertia']:.6f} -> {args.out}")
    return 0


def _label_one(payload):
    scene_path, vocab_path, out_dir, adv_count, thresholds_doc, weights_doc = payload
    from .oracle import FinalScoreWeights, MetricThresholds

    scene = formats.read_scene(scene_path)
    vocab = formats.read_vocabulary(vocab_path)
    records = compute_scene_labels(
        scene,
        vocab,
        adversarial_count=adv_count,
        thresholds=MetricThresholds(**thresholds_doc),
        weights=FinalScoreWeights(**weights_doc),
    )
    out_path = Path(out_dir) / f"{scene.scene_id}.jsonl"
    formats.write_labels(out_path, records)
    return scene.scene_id


def cmd_labels_compute(args) -> int:
    cfg = _load_config(args)
    corpus_dir = Path(args.scenes)
    manifest = formats.read_manifest(corpus_dir / "manifest.json")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_document()
    payloads = [
        (
            str(corpus_dir / rel),
            args.vocab,
            str(out),
            cfg.adversarial_count,
            doc["thresholds"],
            doc["final_weights"],
        )
        for rel in manifest["scenes"]
    ]
    if cfg.jobs > 1 and payloads:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            ids = list(pool.map(_label_one, payloads))
    else:
        ids = [_label_one(p) for p in payloads]
    print(f"labeled {len(ids)} scenes -> {out}")
    return 0


def _load_labeled_corpus(scenes_dir, labels_dir):
    scenes = formats.read_corpus(scenes_dir)
    labels = {}
    scores = {}
    for scene in scenes:
        path = Path(labels_dir) / f"{scene.scene_id}.jsonl"
        if not path.exists():
            raise ValueError(f"missing label file for scene {scene.scene_id}: {path}")
        metrics, finals = formats.read_labels(path)
        labels[scene.scene_id] = metrics
        scores[scene.scene_id] = finals
    return scenes, labels, scores


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        seed=cfg.seed,
        w_imitation=cfg.w_imitation,
        w_scorer=cfg.w_scorer,
        adversarial_count=cfg.adversarial_count,
        d=cfg.d,
    )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    scenes, labels, scores = _load_labeled_corpus(args.scenes, args.labels)
    vocab = formats.read_vocabulary(args.vocab)
    log_path = args.log or (str(args.out) + ".log.jsonl")
    model, log = train(
        scenes,
        labels,
        scores,
        vocab,
        cfg=_train_config(cfg),
        log_path=log_path,
        thresholds=cfg.thresholds,
        final_weights=cfg.final_weights,
    )
    model.scorer.loss_weights = dict(cfg.metric_loss_weights)
    model.save(args.out)
    cfg.dump(str(args.out) + ".config.json")
    last = log[-1] if log else {}
    print(f"trained {cfg.epochs} epochs -> {args.out}; last epoch: {last}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    scenes, labels, scores = _load_labeled_corpus(args.scenes, args.labels)
    vocab = formats.read_vocabulary(args.vocab)
    model = ScorerModel.load(args.model)
    _, holdout = _split_for_eval(scenes, args)
    report = evaluate_scorer(
        model,
        holdout,
        labels,
        scores,
        vocab,
        cfg=_train_config(cfg),
        thresholds=cfg.thresholds,
        final_weights=cfg.final_weights,
        oracle_injection=args.oracle_injection,
    )
    chosen_metrics = []
    for scene in holdout:
        result = select(
            scene,
            model,
            vocab,
            weights=cfg.final_weights,
            oracle_injection=args.oracle_injection,
            thresholds=cfg.thresholds,
        )
        chosen_metrics.append(eval_all(scene, result.chosen, cfg.thresholds))
    driving = aggregate_report(chosen_metrics, cfg.aggregate)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    formats.dump_json({"scorer": report, "driving": driving}, out_dir / "report.json")
    print(f"regret={report['regret']:.4f} random_regret={report['random_regret']:.4f} -> {out_dir / 'report.json'}")
    return 0


def _split_for_eval(scenes, args):
    from .scorer import split_holdout

    if getattr(args, "all_scenes", False):
        return scenes, scenes
    return split_holdout(scenes, 6)


def cmd_select(args) -> int:
    cfg = _load_config(args)
    scenes = formats.read_corpus(args.scenes)
    vocab = formats.read_vocabulary(args.vocab)
    model = ScorerModel.load(args.model)
    externals = {}
    if args.external:
        externals = {tid: traj for tid, traj in formats.read_trajectories(args.external)}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for scene in scenes:
        result = select(
            scene,
            model,
            vocab,
            external=externals.get(scene.scene_id),
            weights=cfg.final_weights,
            thresholds=cfg.thresholds,
        )
        doc = formats.selection_to_document(scene.scene_id, result)
        formats.dump_json(doc, out_dir / f"{scene.scene_id}.json")
        summaries.append({"scene_id": scene.scene_id, "source": result.source})
    formats.dump_jsonl(summaries, out_dir / "summary.jsonl")
    n_ext = sum(1 for s in summaries if s["source"] == "external")
    print(f"selected for {len(summaries)} scenes ({n_ext} external) -> {out_dir}")
    return 0


def cmd_config_dump(args) -> int:
    cfg = _load_config(args)
    cfg.dump(args.out)
    print(f"wrote effective config -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON config file; flags take precedence")

    scenes = sub.add_parser("scenes", help="scene corpus commands").add_subparsers(
        dest="subcommand", required=True
    )
    gen = scenes.add_parser("generate", help="generate a synthetic scene corpus")
    gen.add_argument("--count", type=int, default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True)
    gen.add_argument("--jobs", type=int, default=None)
    add_config(gen)
    gen.set_defaults(func=cmd_scenes_generate)

    vocab = sub.add_parser("vocab", help="vocabulary commands").add_subparsers(
        dest="subcommand", required=True
    )
    vb = vocab.add_parser("build", help="cluster expert trajectories into a vocabulary")
    vb.add_argument("--experts", required=True, help="corpus directory providing expert trajectories")
    vb.add_argument("--m", type=int, default=None)
    vb.add_argument("--seed", type=int, default=None)
    vb.add_argument("--out", required=True)
    add_config(vb)
    vb.set_defaults(func=cmd_vocab_build)

    labels = sub.add_parser("labels", help="oracle label commands").add_subparsers(
        dest="subcommand", required=True
    )
    lc = labels.add_parser("compute", help="compute oracle labels per scene")
    lc.add_argument("--scenes", required=True)
    lc.add_argument("--vocab", required=True)
    lc.add_argument("--out", required=True)
    lc.add_argument("--jobs", type=int, default=None)
    add_config(lc)
    lc.set_defaults(func=cmd_labels_compute)

    tr = sub.add_parser("train", help="jointly train planner and scorer")
    tr.add_argument("--scenes", required=True)
    tr.add_argument("--labels", required=True)
    tr.add_argument("--vocab", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--log", default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--d", type=int, default=None)
    add_config(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a trained model against the oracle")
    ev.add_argument("--scenes", required=True)
    ev.add_argument("--labels", required=True)
    ev.add_argument("--vocab", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--oracle-injection", action="store_true")
    ev.add_argument("--all-scenes", action="store_true", help="evaluate every scene, not the holdout split")
    add_config(ev)
    ev.set_defaults(func=cmd_evaluate)

    se = sub.add_parser("select", help="run trajectory selection per scene")
    se.add_argument("--scenes", required=True)
    se.add_argument("--vocab", required=True)
    se.add_argument("--model", required=True)
    se.add_argument("--out", required=True)
    se.add_argument("--external", default=None, help="trajectory file of external candidates keyed by scene id")
    add_config(se)
    se.set_defaults(func=cmd_select)

    cfgp = sub.add_parser("config", help="configuration commands").add_subparsers(
        dest="subcommand", required=True
    )
    cd = cfgp.add_parser("dump", help="write the effective configuration")
    cd.add_argument("--out", required=True)
    add_config(cd)
    cd.set_defaults(func=cmd_config_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
