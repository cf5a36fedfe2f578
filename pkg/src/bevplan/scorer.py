"""Per-metric prediction heads, the composite objective, and training.

Eight parallel MLP heads read the context-aware candidate embeddings:
a sigmoid-squashed regression head for progress, one logit per binary
metric, and three logits per ternary metric.  Training jointly
optimizes the planner and the heads with a weighted sum of imitation
and scoring losses under AdamW and a cosine schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import Scene, Trajectory
from .labeling import scene_candidates, vocab_candidate_id
from .nn import MLP, bce_loss, cross_entropy_loss, mse_loss
from .optim import AdamW
from .oracle import (
    BINARY_METRICS,
    FinalScoreWeights,
    METRIC_NAMES,
    MetricThresholds,
    MetricVector,
    TERNARY_METRICS,
    eval_all,
    final_score,
    final_score_values,
)
from .params import load_params, save_params
from .planner import PlannerParams, embed_scene_candidates, render_bev
from .vocabulary import Vocabulary, nearest

_HEAD_HIDDEN = 64


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class ScorerParams:
    """One MLP head per metric plus the per-metric loss weights."""

    d: int
    heads: dict[str, MLP]
    loss_weights: dict[str, float] = field(default_factory=lambda: {m: 1.0 for m in METRIC_NAMES})

    @staticmethod
    def head_width(metric: str) -> int:
        return 3 if metric in TERNARY_METRICS else 1

    @staticmethod
    def create(rng: np.random.Generator, d: int = 32, hidden: int = _HEAD_HIDDEN) -> "ScorerParams":
        heads = {
            m: MLP.create(rng, [d, hidden, ScorerParams.head_width(m)]) for m in METRIC_NAMES
        }
        return ScorerParams(d=d, heads=heads)

    def tensors(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for metric, head in self.heads.items():
            named.update(head.tensors(f"scorer/{metric}"))
        return named


@dataclass(frozen=True)
class PredictedMetrics:
    """Probabilistic counterpart of MetricVector."""

    ep: float
    dac: float
    tlc: float
    ttc: float
    lk: float
    hc: float
    nc: tuple[float, float, float]
    ddc: tuple[float, float, float]

    def __post_init__(self):
        for name in ("ep", "dac", "tlc", "ttc", "lk", "hc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} probability {v} outside [0, 1]")
        for name in TERNARY_METRICS:
            dist = getattr(self, name)
            if len(dist) != 3 or any(p < 0.0 or p > 1.0 for p in dist):
                raise ValueError(f"{name} must be a 3-way distribution")
            if abs(sum(dist) - 1.0) > 1e-9:
                raise ValueError(f"{name} distribution must sum to 1")


def predict_batch(embeddings: Tensor, params: ScorerParams) -> dict[str, Tensor]:
    """Head outputs for (C, d) embeddings as probability tensors."""
    if embeddings.data.shape[-1] != params.d:
        raise ValueError(f"embedding width {embeddings.data.shape[-1]} != scorer d {params.d}")
    out: dict[str, Tensor] = {}
    for metric in METRIC_NAMES:
        logits = params.heads[metric](embeddings)
        if metric in TERNARY_METRICS:
            out[metric] = ad.softmax(logits, axis=-1)  # (C, 3)
        else:
            out[metric] = ad.sigmoid(logits)  # (C, 1)
    return out


def predict(embedding: Tensor | np.ndarray, params: ScorerParams) -> PredictedMetrics:
    """Predictions for a single embedding vector."""
    data = embedding.data if isinstance(embedding, Tensor) else np.asarray(embedding, dtype=float)
    batch = predict_batch(Tensor(data.reshape(1, -1)), params)
    return PredictedMetrics(
        ep=float(batch["ep"].data[0, 0]),
        dac=float(batch["dac"].data[0, 0]),
        tlc=float(batch["tlc"].data[0, 0]),
        ttc=float(batch["ttc"].data[0, 0]),
        lk=float(batch["lk"].data[0, 0]),
        hc=float(batch["hc"].data[0, 0]),
        nc=tuple(batch["nc"].data[0]),
        ddc=tuple(batch["ddc"].data[0]),
    )


_TERNARY_LEVELS = np.array([0.0, 0.5, 1.0])


def expected_score(pred: PredictedMetrics) -> dict[str, float]:
    """Collapse predictions to scalar scores; ternary heads by expectation."""
    values = {name: float(getattr(pred, name)) for name in ("ep", "dac", "tlc", "ttc", "lk", "hc")}
    for name in TERNARY_METRICS:
        values[name] = float(np.dot(_TERNARY_LEVELS, getattr(pred, name)))
    return values


def label_arrays(labels: list[MetricVector]) -> dict[str, np.ndarray]:
    """Column arrays per metric; ternary labels as class indices {0, 1, 2}."""
    cols = {m: np.array([getattr(v, m) for v in labels]) for m in METRIC_NAMES}
    out: dict[str, np.ndarray] = {"ep": cols["ep"].reshape(-1, 1)}
    for m in BINARY_METRICS:
        out[m] = cols[m].reshape(-1, 1)
    for m in TERNARY_METRICS:
        classes = np.rint(cols[m] * 2.0)
        if not np.isin(classes, (0.0, 1.0, 2.0)).all():
            raise ValueError(f"{m} labels must be in {{0, 0.5, 1}}")
        out[m] = classes.astype(int)
    return out


def composite_loss_tensors(
    preds: dict[str, Tensor],
    labels: dict[str, np.ndarray],
    loss_weights: dict[str, float],
) -> Tensor:
    """Weighted sum of per-metric losses, each averaged over candidates."""
    total = Tensor(0.0)
    for metric in METRIC_NAMES:
        w = loss_weights.get(metric, 1.0)
        if w < 0:
            raise ValueError("metric loss weights must be non-negative")
        y = labels[metric]
        if metric == "ep":
            term = mse_loss(preds[metric], y)
        elif metric in BINARY_METRICS:
            term = bce_loss(preds[metric], y)
        else:
            term = cross_entropy_loss(preds[metric], y)
        total = total + Tensor(w) * term
    return total


def composite_loss(
    preds: list[PredictedMetrics],
    labels: list[MetricVector],
    loss_weights: dict[str, float] | None = None,
) -> float:
    """Composite objective value for already-computed predictions."""
    if len(preds) != len(labels):
        raise ValueError("prediction/label count mismatch")
    loss_weights = loss_weights or {m: 1.0 for m in METRIC_NAMES}
    tensors: dict[str, Tensor] = {}
    for metric in METRIC_NAMES:
        rows = [getattr(p, metric) for p in preds]
        arr = np.array(rows, dtype=float)
        tensors[metric] = Tensor(arr.reshape(len(preds), -1))
    return composite_loss_tensors(tensors, label_arrays(labels), loss_weights).item()


@dataclass
class ScorerModel:
    """Planner and scorer parameters as one versioned artifact."""

    planner: PlannerParams
    scorer: ScorerParams
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.planner.d

    def tensors(self) -> dict[str, Tensor]:
        return {**self.planner.tensors(), **self.scorer.tensors()}

    @staticmethod
    def create(seed: int = 0, d: int = 32) -> "ScorerModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0D]))
        return ScorerModel(
            planner=PlannerParams.create(rng, d=d),
            scorer=ScorerParams.create(rng, d=d),
            meta={"seed": seed, "d": d},
        )

    def save(self, path):
        save_params(path, self.tensors(), meta={**self.meta, "d": self.d})

    @staticmethod
    def load(path) -> "ScorerModel":
        named, meta = load_params(path)
        d = int(meta["d"])
        planner = _planner_from_tensors(named, d)
        scorer = _scorer_from_tensors(named, d)
        return ScorerModel(planner=planner, scorer=scorer, meta=meta)


def _collect_mlp(named: dict[str, Tensor], prefix: str) -> MLP:
    from .nn import Linear

    layers = []
    i = 0
    while f"{prefix}.{i}.weight" in named:
        layers.append(Linear(named[f"{prefix}.{i}.weight"], named.get(f"{prefix}.{i}.bias")))
        i += 1
    if not layers:
        raise ValueError(f"no layers found under {prefix!r}")
    return MLP(layers)


def _planner_from_tensors(named: dict[str, Tensor], d: int) -> PlannerParams:
    from .nn import Linear

    return PlannerParams(
        d=d,
        bev_encoder=Linear(named["planner/bev_encoder.weight"], named.get("planner/bev_encoder.bias")),
        ego_query=Linear(named["planner/ego_query.weight"], named.get("planner/ego_query.bias")),
        pos_embed=named["planner/pos_embed"],
        agent_encoder=_collect_mlp(named, "planner/agent_encoder"),
        attn_q=named["planner/attn_q"],
        attn_k=named["planner/attn_k"],
        attn_v=named["planner/attn_v"],
        offset_head=_collect_mlp(named, "planner/offset_head"),
    )


def _scorer_from_tensors(named: dict[str, Tensor], d: int) -> ScorerParams:
    heads = {m: _collect_mlp(named, f"scorer/{m}") for m in METRIC_NAMES}
    return ScorerParams(d=d, heads=heads)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    w_imitation: float = 20.0
    w_scorer: float = 14.0
    adversarial_count: int = 8
    holdout_modulus: int = 6  # every holdout_modulus-th scene is held out (5:1)
    d: int = 32


@dataclass
class _SceneSample:
    scene: Scene
    semantic: np.ndarray
    candidate_ids: list[str]
    candidates: list[Trajectory]
    labels: dict[str, np.ndarray]
    nearest_index: int
    oracle_scores: np.ndarray  # final scores of the vocabulary candidates


def _prepare_sample(
    scene: Scene,
    vocab: Vocabulary,
    scene_labels: dict[str, MetricVector],
    scene_scores: dict[str, float],
    cfg: TrainConfig,
) -> _SceneSample:
    ids, trajs = scene_candidates(scene, vocab, cfg.adversarial_count)
    missing = [cid for cid in ids if cid not in scene_labels]
    if missing:
        raise ValueError(f"scene {scene.scene_id} is missing labels for {missing[:4]}...")
    vectors = [scene_labels[cid] for cid in ids]
    oracle_scores = np.array([scene_scores[vocab_candidate_id(i)] for i in range(vocab.size)])
    return _SceneSample(
        scene=scene,
        semantic=render_bev(scene),
        candidate_ids=ids,
        candidates=trajs,
        labels=label_arrays(vectors),
        nearest_index=nearest(vocab, scene.expert)[0],
        oracle_scores=oracle_scores,
    )


def _scene_loss(model: ScorerModel, sample: _SceneSample, vocab: Vocabulary, cfg: TrainConfig):
    from .planner import imitation_loss

    embeddings = embed_scene_candidates(model.planner, sample.scene, sample.candidates, sample.semantic)
    preds = predict_batch(embeddings, model.scorer)
    scorer_term = composite_loss_tensors(preds, sample.labels, model.scorer.loss_weights)
    imit_term = imitation_loss(embeddings, vocab, sample.nearest_index, sample.scene.expert, model.planner)
    total = Tensor(cfg.w_imitation) * imit_term + Tensor(cfg.w_scorer) * scorer_term
    return total, imit_term.item(), scorer_term.item()


def split_holdout(items: list, modulus: int) -> tuple[list, list]:
    """Deterministic 1-in-``modulus`` holdout split by position."""
    train = [x for i, x in enumerate(items) if i % modulus != modulus - 1]
    held = [x for i, x in enumerate(items) if i % modulus == modulus - 1]
    return train, held


def train(
    scenes: list[Scene],
    labels: dict[str, dict[str, MetricVector]],
    scores: dict[str, dict[str, float]],
    vocab: Vocabulary,
    cfg: TrainConfig = TrainConfig(),
    model: ScorerModel | None = None,
    log_path=None,
    thresholds: MetricThresholds = MetricThresholds(),
    final_weights: FinalScoreWeights = FinalScoreWeights(),
) -> tuple[ScorerModel, list[dict]]:
    """Joint planner/scorer optimization; returns (model, epoch log).

    ``labels``/``scores`` map scene id -> candidate id -> oracle metric
    vector / final score.  Scenes are split 5:1 into train/holdout by
    position; each epoch logs losses and holdout quality.  Fully
    deterministic for a fixed config.
    """
    if model is None:
        model = ScorerModel.create(seed=cfg.seed, d=cfg.d)
    samples = [
        _prepare_sample(s, vocab, labels[s.scene_id], scores[s.scene_id], cfg) for s in scenes
    ]
    train_samples, holdout_samples = split_holdout(samples, cfg.holdout_modulus)
    if not train_samples:
        raise ValueError("no training scenes after the holdout split")

    named = model.tensors()
    steps_per_epoch = max(1, math.ceil(len(train_samples) / cfg.batch_size))
    optimizer = AdamW(
        base_lr=cfg.learning_rate,
        horizon=cfg.epochs * steps_per_epoch,
        weight_decay=cfg.weight_decay,
    )
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x0D7]))

    log: list[dict] = []
    writer = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = order_rng.permutation(len(train_samples))
            epoch_imit = 0.0
            epoch_scorer = 0.0
            lr_at_start = optimizer.current_lr()
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                optimizer.zero_grad(named)
                for idx in batch:
                    sample = train_samples[idx]
                    total, imit_val, scorer_val = _scene_loss(model, sample, vocab, cfg)
                    if not math.isfinite(total.item()):
                        raise TrainingDiverged(
                            f"non-finite loss at epoch {epoch} scene {sample.scene.scene_id}"
                        )
                    scaled = total * Tensor(1.0 / len(batch))
                    ad.backward(scaled)
                    epoch_imit += imit_val
                    epoch_scorer += scorer_val
                optimizer.step(named)
            record = {
                "epoch": epoch,
                "lr": lr_at_start,
                "imitation_loss": epoch_imit / max(1, len(train_samples)),
                "scorer_loss": epoch_scorer / max(1, len(train_samples)),
            }
            if holdout_samples:
                record["holdout"] = _holdout_report(model, holdout_samples, vocab, cfg, thresholds, final_weights)
            log.append(record)
            if writer:
                writer.write(json.dumps(record, sort_keys=True) + "\n")
                writer.flush()
    finally:
        if writer:
            writer.close()
    model.meta = {**model.meta, "epochs": cfg.epochs, "seed": cfg.seed, "d": cfg.d}
    return model, log


def _predicted_final_scores(model: ScorerModel, sample: _SceneSample, vocab: Vocabulary, weights: FinalScoreWeights) -> np.ndarray:
    """Predicted weighted scores of the vocabulary candidates only."""
    embeddings = embed_scene_candidates(model.planner, sample.scene, sample.candidates, sample.semantic)
    preds = predict_batch(embeddings, model.scorer)
    m = vocab.size
    values = {
        name: preds[name].data[:m, 0]
        for name in ("ep", "dac", "tlc", "ttc", "lk", "hc")
    }
    for name in TERNARY_METRICS:
        values[name] = preds[name].data[:m] @ _TERNARY_LEVELS
    return (
        weights.nc * values["nc"]
        + weights.dac * values["dac"]
        + weights.ep * values["ep"]
        + weights.ttc * values["ttc"]
        + weights.lk * values["lk"]
        + weights.ddc * values["ddc"]
    )


def _holdout_report(
    model: ScorerModel,
    samples: list[_SceneSample],
    vocab: Vocabulary,
    cfg: TrainConfig,
    thresholds: MetricThresholds,
    weights: FinalScoreWeights,
) -> dict:
    from .selection import select

    hits = {m: 0 for m in METRIC_NAMES if m != "ep"}
    counts = {m: 0 for m in hits}
    ep_err = []
    regrets = []
    for sample in samples:
        embeddings = embed_scene_candidates(model.planner, sample.scene, sample.candidates, sample.semantic)
        preds = predict_batch(embeddings, model.scorer)
        for m in BINARY_METRICS:
            pred = (preds[m].data[:, 0] >= 0.5).astype(float)
            hits[m] += int((pred == sample.labels[m][:, 0]).sum())
            counts[m] += len(pred)
        for m in TERNARY_METRICS:
            pred = preds[m].data.argmax(axis=1)
            hits[m] += int((pred == sample.labels[m]).sum())
            counts[m] += len(pred)
        ep_err.extend(np.abs(preds["ep"].data[:, 0] - sample.labels["ep"][:, 0]))

        result = select(sample.scene, model, vocab, weights=weights, semantic=sample.semantic)
        chosen_score = final_score(eval_all(sample.scene, result.chosen, thresholds), weights)
        regrets.append(float(sample.oracle_scores.max() - chosen_score))

    report = {f"{m}_accuracy": hits[m] / max(1, counts[m]) for m in hits}
    report["ep_mae"] = float(np.mean(ep_err)) if ep_err else 0.0
    report["regret"] = float(np.mean(regrets)) if regrets else 0.0
    return report


def evaluate_scorer(
    model: ScorerModel,
    scenes: list[Scene],
    labels: dict[str, dict[str, MetricVector]],
    scores: dict[str, dict[str, float]],
    vocab: Vocabulary,
    cfg: TrainConfig = TrainConfig(),
    thresholds: MetricThresholds = MetricThresholds(),
    final_weights: FinalScoreWeights = FinalScoreWeights(),
    oracle_injection: bool = False,
) -> dict:
    """Accuracy/MAE/calibration per metric plus selection regret.

    The random-selection baseline is the expected regret of picking a
    vocabulary candidate uniformly at random.  With oracle injection
    the oracle labels stand in for predictions, so regret is zero by
    construction; that mode exercises the selection plumbing alone.
    """
    from .selection import select

    if not scenes:
        raise ValueError("cannot evaluate on an empty corpus")
    per_metric_hits = {m: 0 for m in METRIC_NAMES if m != "ep"}
    per_metric_counts = {m: 0 for m in per_metric_hits}
    calib: dict[str, list] = {m: [] for m in BINARY_METRICS}
    ep_err: list[float] = []
    regrets: list[float] = []
    random_regrets: list[float] = []
    per_scene: list[dict] = []

    for scene in scenes:
        sample = _prepare_sample(scene, vocab, labels[scene.scene_id], scores[scene.scene_id], cfg)
        embeddings = embed_scene_candidates(model.planner, scene, sample.candidates, sample.semantic)
        preds = predict_batch(embeddings, model.scorer)
        for m in BINARY_METRICS:
            p = preds[m].data[:, 0]
            y = sample.labels[m][:, 0]
            per_metric_hits[m] += int(((p >= 0.5).astype(float) == y).sum())
            per_metric_counts[m] += len(p)
            calib[m].append((p, y))
        for m in TERNARY_METRICS:
            pred = preds[m].data.argmax(axis=1)
            per_metric_hits[m] += int((pred == sample.labels[m]).sum())
            per_metric_counts[m] += len(pred)
        ep_err.extend(np.abs(preds["ep"].data[:, 0] - sample.labels["ep"][:, 0]))

        best = float(sample.oracle_scores.max())
        if oracle_injection:
            result = select(scene, model, vocab, weights=final_weights, oracle_injection=True,
                            thresholds=thresholds, semantic=sample.semantic)
            chosen_score = final_score(eval_all(scene, result.chosen, thresholds), final_weights)
        else:
            result = select(scene, model, vocab, weights=final_weights, semantic=sample.semantic)
            chosen_score = final_score(eval_all(scene, result.chosen, thresholds), final_weights)
        regret = best - chosen_score
        regrets.append(regret)
        random_regret = float(best - sample.oracle_scores.mean())
        random_regrets.append(random_regret)
        per_scene.append({"scene_id": scene.scene_id, "regret": regret, "random_regret": random_regret})

    report: dict = {f"{m}_accuracy": per_metric_hits[m] / max(1, per_metric_counts[m]) for m in per_metric_hits}
    for m in BINARY_METRICS:
        p = np.concatenate([c[0] for c in calib[m]])
        y = np.concatenate([c[1] for c in calib[m]])
        report[f"{m}_calibration_error"] = _expected_calibration_error(p, y)
    report["ep_mae"] = float(np.mean(ep_err))
    report["regret"] = float(np.mean(regrets))
    report["random_regret"] = float(np.mean(random_regrets))
    report["per_scene"] = per_scene
    return report


def _expected_calibration_error(probs: np.ndarray, targets: np.ndarray, bins: int = 10) -> float:
    edges = np.linspace(0.0, 1.0, bins + 1)
    total = len(probs)
    err = 0.0
    for i in range(bins):
        sel = (probs >= edges[i]) & (probs < edges[i + 1] if i < bins - 1 else probs <= edges[i + 1])
        if not sel.any():
            continue
        err += sel.sum() / total * abs(probs[sel].mean() - targets[sel].mean())
    return float(err)
