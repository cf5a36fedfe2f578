"""Post-processing: drivable filter, weighted ranking, ensemble choice.

A scene's vocabulary candidates are pre-filtered by a waypoint-center
drivable test, scored by the metric heads, and ranked by the weighted
final score.  An externally provided trajectory can be scored through
the identical pipeline (without residual offsets) and wins the ensemble
when it outscores the top candidate; ties prefer the candidate side.

Oracle-injection mode substitutes ground-truth metric values for
predictions and skips the learned offsets, which isolates the selection
logic from model quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .core import Scene, Trajectory, world_to_grid
from .oracle import FinalScoreWeights, MetricThresholds, eval_all, final_score_values
from .planner import decode_offsets, embed_scene_candidates, render_bev
from .scorer import PredictedMetrics, ScorerModel, expected_score, predict_batch
from .vocabulary import Vocabulary

TOP_K = 16

E2E = "e2e"
EXTERNAL = "external"


@dataclass
class SelectionResult:
    chosen: Trajectory
    source: str  # E2E or EXTERNAL
    s_final_e2e: float
    s_final_external: float | None
    filtered_count: int
    filter_bypassed: bool
    ranking: list[tuple[int, float]] = field(default_factory=list)  # (vocab index, score)
    chosen_index: int | None = None


def filter_drivable(candidates: list[Trajectory], scene: Scene) -> tuple[list[int], bool]:
    """Indices of candidates whose waypoint centers stay on the mask.

    This is a permissive pre-filter (centers only, unlike the metric's
    corner test).  When it would reject everything it is bypassed and
    all candidates survive, flagged in the result.
    """
    survivors = []
    for i, traj in enumerate(candidates):
        uv = world_to_grid(traj.xy(), scene.grid)
        cols = np.floor(uv[:, 0]).astype(int)
        rows = np.floor(uv[:, 1]).astype(int)
        inside = (
            (cols >= 0)
            & (cols < scene.grid.cells_x)
            & (rows >= 0)
            & (rows < scene.grid.cells_y)
        )
        if inside.all() and scene.drivable[rows, cols].all():
            survivors.append(i)
    if not survivors:
        return list(range(len(candidates))), True
    return survivors, False


def rank_candidates(
    preds: list[PredictedMetrics],
    weights: FinalScoreWeights = FinalScoreWeights(),
) -> list[tuple[int, float]]:
    """Descending (index, weighted score) ranking; ties keep lower index."""
    if not preds:
        raise ValueError("cannot rank an empty candidate set")
    scored = [(i, final_score_values(expected_score(p), weights)) for i, p in enumerate(preds)]
    return sorted(scored, key=lambda item: (-item[1], item[0]))


def score_external(
    traj: Trajectory,
    scene: Scene,
    model: ScorerModel,
    weights: FinalScoreWeights = FinalScoreWeights(),
    semantic: np.ndarray | None = None,
) -> tuple[PredictedMetrics, float]:
    """Metric predictions and weighted score of one outside trajectory.

    The trajectory runs through the same sample/pool/refine/predict
    path as the vocabulary; no residual offset is applied.
    """
    embeddings = embed_scene_candidates(model.planner, scene, [traj], semantic)
    pred = _row_prediction(predict_batch(embeddings, model.scorer), 0)
    return pred, final_score_values(expected_score(pred), weights)


def _row_prediction(batch: dict[str, Tensor], row: int) -> PredictedMetrics:
    return PredictedMetrics(
        ep=float(batch["ep"].data[row, 0]),
        dac=float(batch["dac"].data[row, 0]),
        tlc=float(batch["tlc"].data[row, 0]),
        ttc=float(batch["ttc"].data[row, 0]),
        lk=float(batch["lk"].data[row, 0]),
        hc=float(batch["hc"].data[row, 0]),
        nc=tuple(batch["nc"].data[row]),
        ddc=tuple(batch["ddc"].data[row]),
    )


def _oracle_prediction(scene: Scene, traj: Trajectory, thresholds: MetricThresholds) -> PredictedMetrics:
    """Ground-truth metrics dressed as predictions (oracle injection)."""
    m = eval_all(scene, traj, thresholds)

    def onehot(v: float) -> tuple[float, float, float]:
        dist = [0.0, 0.0, 0.0]
        dist[int(round(v * 2.0))] = 1.0
        return tuple(dist)

    return PredictedMetrics(
        ep=m.ep, dac=m.dac, tlc=m.tlc, ttc=m.ttc, lk=m.lk, hc=m.hc,
        nc=onehot(m.nc), ddc=onehot(m.ddc),
    )


def select(
    scene: Scene,
    model: ScorerModel,
    vocab: Vocabulary,
    external: Trajectory | None = None,
    weights: FinalScoreWeights = FinalScoreWeights(),
    oracle_injection: bool = False,
    thresholds: MetricThresholds = MetricThresholds(),
    semantic: np.ndarray | None = None,
) -> SelectionResult:
    """Full per-scene pipeline: filter, score, rank, ensemble."""
    survivors, bypassed = filter_drivable(vocab.entries, scene)
    if semantic is None and not oracle_injection:
        semantic = render_bev(scene)

    candidates = [vocab.entries[i] for i in survivors]
    if oracle_injection:
        preds = [_oracle_prediction(scene, t, thresholds) for t in candidates]
        decoded = candidates  # no learned offsets in injection mode
    else:
        embeddings = embed_scene_candidates(model.planner, scene, candidates, semantic)
        batch = predict_batch(embeddings, model.scorer)
        preds = [_row_prediction(batch, i) for i in range(len(candidates))]
        survivor_vocab = Vocabulary(entries=candidates, build_meta={"m": len(candidates)})
        decoded = decode_offsets(embeddings, survivor_vocab, model.planner)

    ranking_local = rank_candidates(preds, weights)
    ranking = [(survivors[i], score) for i, score in ranking_local]
    top_local, s_e2e = ranking_local[0]
    chosen = decoded[top_local]
    chosen_index = survivors[top_local]

    s_ext = None
    source = E2E
    if external is not None:
        if oracle_injection:
            ext_pred = _oracle_prediction(scene, external, thresholds)
            s_ext = final_score_values(expected_score(ext_pred), weights)
        else:
            _, s_ext = score_external(external, scene, model, weights, semantic)
        if s_ext > s_e2e:
            source = EXTERNAL
            chosen = external
            chosen_index = None

    return SelectionResult(
        chosen=chosen,
        source=source,
        s_final_e2e=s_e2e,
        s_final_external=s_ext,
        filtered_count=len(survivors),
        filter_bypassed=bypassed,
        ranking=ranking[:TOP_K],
        chosen_index=chosen_index,
    )
