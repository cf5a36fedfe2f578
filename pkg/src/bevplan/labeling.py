"""Candidate enumeration and oracle labeling shared by CLI and trainer.

A scene's labeled candidate set is its vocabulary entries plus a fixed
number of adversarial perturbations of the expert.  The adversarial
draw is keyed off the scene's own stored seed, so labels written by one
process can be re-associated with regenerated trajectories elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Scene, Trajectory
from .oracle import FinalScoreWeights, MetricThresholds, MetricVector, eval_all, final_score
from .scenegen import AdversarialConfig, generate_adversarial_candidates
from .vocabulary import Vocabulary

# Fixed stream id for adversarial draws; per-scene variation comes from
# the scene seed itself.
_ADVERSARIAL_STREAM = 0x5EED


def vocab_candidate_id(index: int) -> str:
    return f"v{index:04d}"


def adversarial_candidate_id(index: int) -> str:
    return f"a{index:03d}"


def scene_candidates(
    scene: Scene,
    vocab: Vocabulary,
    adversarial_count: int = 8,
    adv_cfg: AdversarialConfig = AdversarialConfig(),
) -> tuple[list[str], list[Trajectory]]:
    """Deterministic (candidate ids, trajectories) for one scene."""
    ids = [vocab_candidate_id(i) for i in range(vocab.size)]
    trajs = list(vocab.entries)
    if adversarial_count > 0:
        advs = generate_adversarial_candidates(scene, adversarial_count, seed=_ADVERSARIAL_STREAM, cfg=adv_cfg)
        ids.extend(adversarial_candidate_id(j) for j in range(len(advs)))
        trajs.extend(advs)
    return ids, trajs


@dataclass(frozen=True)
class LabelRecord:
    candidate_id: str
    metrics: MetricVector
    final_score: float


def compute_scene_labels(
    scene: Scene,
    vocab: Vocabulary,
    adversarial_count: int = 8,
    thresholds: MetricThresholds = MetricThresholds(),
    weights: FinalScoreWeights = FinalScoreWeights(),
    adv_cfg: AdversarialConfig = AdversarialConfig(),
) -> list[LabelRecord]:
    """Oracle metrics and final score for every candidate of a scene."""
    ids, trajs = scene_candidates(scene, vocab, adversarial_count, adv_cfg)
    records = []
    for cand_id, traj in zip(ids, trajs):
        metrics = eval_all(scene, traj, thresholds)
        records.append(LabelRecord(cand_id, metrics, final_score(metrics, weights)))
    return records
