"""Strict JSON configuration for ``synth``, ``train`` and ``compare``.

Files are validated against ``schemas/config.schema.json`` before any value is
used, so a misspelled key is an error rather than a silently ignored default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError, FormatError, UsageError
from .losses import BaseLoss, BlobLossConfig
from .synth import SynthSpec
from .train import EvalConfig, TrainConfig

SPLITS = ("train", "validation", "test")


@lru_cache(maxsize=None)
def schema() -> dict:
    text = resources.files("bloblib").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _validate(doc, definition: str) -> None:
    root = dict(schema())
    root["$ref"] = f"#/$defs/{definition}"
    validator = jsonschema.Draft202012Validator(root)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}")


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def parse_synth_spec(doc: dict) -> SynthSpec:
    _validate(doc, "synthSpec")
    try:
        return SynthSpec.from_dict(doc)
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc


def parse_loss(doc: dict) -> BlobLossConfig:
    base = BaseLoss(kind=doc.get("base", "dice"),
                    tversky_alpha=doc.get("tversky_alpha", 0.5),
                    tversky_beta=doc.get("tversky_beta", 0.5),
                    epsilon=doc.get("epsilon", 1e-5))
    return BlobLossConfig(alpha=doc.get("alpha", 2.0), beta=doc.get("beta", 1.0),
                          base=base, masking_enabled=doc.get("masking", True))


def loss_to_dict(cfg: BlobLossConfig) -> dict:
    return {"alpha": cfg.alpha, "beta": cfg.beta,
            "base": "dice" if cfg.base.kind == "soft-dice" else "tversky",
            "tversky_alpha": cfg.base.tversky_alpha, "tversky_beta": cfg.base.tversky_beta,
            "epsilon": cfg.base.epsilon, "masking": cfg.masking_enabled}


@dataclass(frozen=True)
class ExperimentConfig:
    splits: dict  # split name -> [(SynthSpec, count), ...]
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "splits": {name: [{"count": n, "spec": s.to_dict()} for s, n in entries]
                       for name, entries in self.splits.items()},
            "train": {"learning_rate": self.train.learning_rate, "epochs": self.train.epochs,
                      "seed": self.train.seed,
                      "checkpoint_policy": self.train.checkpoint_policy,
                      "loss": loss_to_dict(self.train.loss)},
            "eval": {"threshold": self.eval.threshold,
                     "connectivity": int(self.eval.connectivity), "tol": self.eval.tol,
                     "matching": self.eval.matching, "min_overlap": self.eval.min_overlap},
            "output": self.output,
        }


def parse_experiment(doc: dict) -> ExperimentConfig:
    _validate(doc, "experiment")
    try:
        splits = {name: [(SynthSpec.from_dict(e["spec"]), e.get("count", 1))
                         for e in doc["splits"][name]] for name in SPLITS}
        t = doc.get("train", {})
        train = TrainConfig(learning_rate=t.get("learning_rate", 1e-2),
                            epochs=t.get("epochs", 300),
                            loss=parse_loss(t.get("loss", {})),
                            seed=t.get("seed", 0),
                            checkpoint_policy=t.get("checkpoint_policy", "last"))
        ev = EvalConfig(**doc.get("eval", {}))
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(splits, train, ev, doc.get("output"))


def load_experiment(path) -> ExperimentConfig:
    return parse_experiment(load_json(path))


def load_synth_spec(path) -> SynthSpec:
    return parse_synth_spec(load_json(path))


def acceptance_config_path() -> Path:
    return Path(str(resources.files("bloblib").joinpath("data/acceptance.json")))
