"""Run configuration: defaults, validation, file round-trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields as dc_fields
from pathlib import Path

from .oracle import AggregateConfig, FinalScoreWeights, METRIC_NAMES, MetricThresholds
from .scenegen import FAMILIES, AdversarialConfig, SceneConfig

# (min, max) inclusive bounds of the numeric knobs; None = unbounded side.
_BOUNDS = {
    "m": (1, 8192),
    "d": (1, 256),
    "epochs": (0, 10000),
    "batch_size": (1, 4096),
    "learning_rate": (0.0, 1.0),
    "weight_decay": (0.0, 1.0),
    "w_imitation": (0.0, None),
    "w_scorer": (0.0, None),
    "adversarial_count": (0, 256),
    "restarts": (1, 256),
    "max_iters": (1, 10000),
    "jobs": (1, 256),
    "seed": (0, 2**31 - 1),
    "count": (0, 1_000_000),
}


@dataclass
class RunConfig:
    """Every knob of the pipeline, with module defaults baked in."""

    # Paths
    corpus_dir: str = "corpus"
    vocab_file: str = "vocab.json"
    model_file: str = "model.bin"
    report_dir: str = "reports"

    # Corpus / vocabulary
    count: int = 600
    seed: int = 0
    m: int = 256
    restarts: int = 8
    max_iters: int = 100

    # Model / training
    d: int = 32
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    w_imitation: float = 20.0
    w_scorer: float = 14.0
    adversarial_count: int = 8
    metric_loss_weights: dict = field(default_factory=lambda: {m: 1.0 for m in METRIC_NAMES})

    # Execution
    jobs: int = 1

    # Nested blocks
    scene: SceneConfig = field(default_factory=SceneConfig)
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    final_weights: FinalScoreWeights = field(default_factory=FinalScoreWeights)
    aggregate: AggregateConfig = field(default_factory=AggregateConfig)
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name, (lo, hi) in _BOUNDS.items():
            value = getattr(self, name)
            if lo is not None and value < lo:
                raise ValueError(f"config field {name}={value} below minimum {lo}")
            if hi is not None and value > hi:
                raise ValueError(f"config field {name}={value} above maximum {hi}")
        unknown = set(self.metric_loss_weights) - set(METRIC_NAMES)
        if unknown:
            raise ValueError(f"unknown metric loss weight keys: {sorted(unknown)}")
        for key, value in self.metric_loss_weights.items():
            if value < 0:
                raise ValueError(f"metric loss weight {key} must be non-negative")

    def to_document(self) -> dict:
        doc = asdict(self)
        doc["scene"]["families"] = list(self.scene.families)
        return doc

    @staticmethod
    def from_document(doc: dict) -> "RunConfig":
        doc = dict(doc)
        kwargs = {}
        known = {f.name for f in dc_fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        nested = {
            "scene": SceneConfig,
            "thresholds": MetricThresholds,
            "final_weights": FinalScoreWeights,
            "aggregate": AggregateConfig,
            "adversarial": AdversarialConfig,
        }
        for key, value in doc.items():
            if key in nested:
                cls = nested[key]
                sub_known = {f.name for f in dc_fields(cls)}
                sub_unknown = set(value) - sub_known
                if sub_unknown:
                    raise ValueError(f"unknown config keys under {key!r}: {sorted(sub_unknown)}")
                if key == "scene" and "families" in value:
                    value = {**value, "families": tuple(value["families"])}
                    for fam in value["families"]:
                        if fam not in FAMILIES:
                            raise ValueError(f"unknown road family {fam!r}")
                kwargs[key] = cls(**value)
            else:
                kwargs[key] = value
        return RunConfig(**kwargs)

    @staticmethod
    def from_file(path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return RunConfig.from_document(json.load(fh))

    def dump(self, path: str | Path):
        from .formats import dump_json

        dump_json(self.to_document(), path)

    def with_overrides(self, **overrides) -> "RunConfig":
        """New config with non-None overrides applied (flags beat file)."""
        doc = self.to_document()
        for key, value in overrides.items():
            if value is None:
                continue
            doc[key] = value
        return RunConfig.from_document(doc)
