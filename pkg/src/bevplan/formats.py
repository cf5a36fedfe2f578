"""On-disk data formats: trajectories, scenes, labels, manifests, reports.

Everything is UTF-8 JSON (one document per file) or JSON-lines, with
full-precision decimal floats and sorted keys so reruns are
byte-identical.  Drivable masks are run-length encoded per row as
alternating zero/one run lengths starting with zeros.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import (
    AgentBox,
    BevGridSpec,
    EgoState,
    Lane,
    Route,
    Scene,
    TrafficLight,
    Trajectory,
)
from .labeling import LabelRecord
from .oracle import MetricVector
from .selection import SelectionResult
from .vocabulary import Vocabulary

SCENE_FORMAT = "bevplan-scene"
VOCAB_FORMAT = "bevplan-vocab"
FORMAT_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dump_json(obj, path: str | Path):
    """Atomic, deterministic JSON document write."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def dump_jsonl(records, path: str | Path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True))
            fh.write("\n")
    os.replace(tmp, path)


def load_jsonl(path: str | Path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# Trajectories --------------------------------------------------------------


def trajectory_record(traj_id: str, traj: Trajectory) -> dict:
    return {"id": traj_id, "dt": traj.dt, "waypoints": _jsonable(traj.xyt())}


def trajectory_from_record(rec: dict) -> tuple[str, Trajectory]:
    arr = np.asarray(rec["waypoints"], dtype=float)
    return str(rec["id"]), Trajectory.from_array(arr, dt=float(rec.get("dt", 0.5)))


def write_trajectories(path: str | Path, items: list[tuple[str, Trajectory]]):
    dump_jsonl([trajectory_record(tid, t) for tid, t in items], path)


def read_trajectories(path: str | Path) -> list[tuple[str, Trajectory]]:
    return [trajectory_from_record(rec) for rec in load_jsonl(path)]


# Scenes --------------------------------------------------------------------


def rle_encode_mask(mask: np.ndarray) -> list[list[int]]:
    """Per-row alternating run lengths, starting with the zero run."""
    rows = []
    for row in np.asarray(mask, dtype=bool):
        runs = []
        current = False
        count = 0
        for v in row:
            if v == current:
                count += 1
            else:
                runs.append(count)
                current = v
                count = 1
        runs.append(count)
        rows.append(runs)
    return rows


def rle_decode_mask(rows: list[list[int]], width: int) -> np.ndarray:
    decoded = []
    for runs in rows:
        row = np.zeros(width, dtype=bool)
        pos = 0
        value = False
        for run in runs:
            if value:
                row[pos : pos + run] = True
            pos += run
            value = not value
        if pos != width:
            raise ValueError(f"run lengths sum to {pos}, expected {width}")
        decoded.append(row)
    return np.stack(decoded)


def scene_to_document(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "version": FORMAT_VERSION,
        "id": scene.scene_id,
        "seed": scene.seed,
        "grid": asdict(scene.grid),
        "drivable_rle": rle_encode_mask(scene.drivable),
        "lanes": [{"points": _jsonable(l.points), "forward": l.forward} for l in scene.lanes],
        "route": {
            "points": _jsonable(scene.route.points),
            "reference_progress": scene.route.reference_progress,
        },
        "agents": [asdict(a) for a in scene.agents],
        "traffic_lights": [{"line": _jsonable(t.line), "state": t.state} for t in scene.traffic_lights],
        "ego": {
            "velocity": list(scene.ego.velocity),
            "acceleration": scene.ego.acceleration,
            "length": scene.ego.length,
            "width": scene.ego.width,
        },
        "expert": trajectory_record("expert", scene.expert),
    }


def scene_from_document(doc: dict) -> Scene:
    if doc.get("format") != SCENE_FORMAT:
        raise ValueError("not a scene document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported scene version {doc.get('version')}")
    grid = BevGridSpec(**doc["grid"])
    ego = EgoState(
        velocity=tuple(doc["ego"]["velocity"]),
        acceleration=float(doc["ego"]["acceleration"]),
        length=float(doc["ego"]["length"]),
        width=float(doc["ego"]["width"]),
    )
    _, expert = trajectory_from_record(doc["expert"])
    return Scene(
        drivable=rle_decode_mask(doc["drivable_rle"], grid.cells_x),
        lanes=[Lane(points=np.asarray(l["points"], dtype=float), forward=bool(l["forward"])) for l in doc["lanes"]],
        route=Route(
            points=np.asarray(doc["route"]["points"], dtype=float),
            reference_progress=float(doc["route"]["reference_progress"]),
        ),
        agents=[AgentBox(**a) for a in doc["agents"]],
        traffic_lights=[
            TrafficLight(line=np.asarray(t["line"], dtype=float), state=t["state"])
            for t in doc["traffic_lights"]
        ],
        ego=ego,
        expert=expert,
        grid=grid,
        scene_id=str(doc["id"]),
        seed=int(doc["seed"]),
    )


def write_scene(path: str | Path, scene: Scene):
    dump_json(scene_to_document(scene), path)


def read_scene(path: str | Path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return scene_from_document(json.load(fh))


def config_hash(config_doc: dict) -> str:
    canonical = json.dumps(_jsonable(config_doc), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(path: str | Path, config_doc: dict, scene_paths: list[str]):
    dump_json(
        {
            "format": "bevplan-manifest",
            "version": FORMAT_VERSION,
            "config": config_doc,
            "config_hash": config_hash(config_doc),
            "count": len(scene_paths),
            "scenes": scene_paths,
        },
        path,
    )


def read_manifest(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_corpus(corpus_dir: str | Path) -> list[Scene]:
    """Scenes listed by a corpus manifest, in manifest order."""
    corpus_dir = Path(corpus_dir)
    manifest = read_manifest(corpus_dir / "manifest.json")
    return [read_scene(corpus_dir / rel) for rel in manifest["scenes"]]


# Vocabulary ----------------------------------------------------------------


def write_vocabulary(path: str | Path, vocab: Vocabulary):
    doc = {
        "format": VOCAB_FORMAT,
        "version": FORMAT_VERSION,
        "build_meta": vocab.build_meta,
        "entries": [trajectory_record(f"v{i:04d}", t) for i, t in enumerate(vocab.entries)],
    }
    dump_json(doc, path)


def read_vocabulary(path: str | Path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != VOCAB_FORMAT:
        raise ValueError("not a vocabulary document")
    entries = [trajectory_from_record(rec)[1] for rec in doc["entries"]]
    return Vocabulary(entries=entries, build_meta=doc.get("build_meta", {}))


# Labels ---------------------------------------------------------------------


def write_labels(path: str | Path, records: list[LabelRecord]):
    dump_jsonl(
        [
            {
                "candidate_id": rec.candidate_id,
                "metrics": rec.metrics.as_dict(),
                "final_score": rec.final_score,
            }
            for rec in records
        ],
        path,
    )


def read_labels(path: str | Path) -> tuple[dict[str, MetricVector], dict[str, float]]:
    """Label file -> (candidate id -> metrics, candidate id -> final score)."""
    metrics: dict[str, MetricVector] = {}
    scores: dict[str, float] = {}
    for rec in load_jsonl(path):
        cid = str(rec["candidate_id"])
        metrics[cid] = MetricVector(**rec["metrics"])
        scores[cid] = float(rec["final_score"])
    return metrics, scores


# Selection -------------------------------------------------------------------


def selection_to_document(scene_id: str, result: SelectionResult) -> dict:
    return {
        "scene_id": scene_id,
        "source": result.source,
        "s_final_e2e": result.s_final_e2e,
        "s_final_external": result.s_final_external,
        "filtered_count": result.filtered_count,
        "filter_bypassed": result.filter_bypassed,
        "chosen_index": result.chosen_index,
        "chosen": trajectory_record("chosen", result.chosen),
        "ranking": [[int(i), float(s)] for i, s in result.ranking],
    }
