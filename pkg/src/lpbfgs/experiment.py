"""Grid evaluation of attacks on the toy task and CSV/JSON report emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import __version__
from .attacks import ATTACKS, LOSSES, AttackConfig, AttackResult, run_attack
from .attribution import STRATEGIES, AttributionMap, integrated_gradients, rank_pixels, selection_from_indices
from .data import SyntheticDataset
from .errors import EvaluationError, UsageError
from .metrics import CSV_COLUMNS, MetricsRow
from .model import Classifier, TrainSpec, atomic_write_text, forward_batch, load_model, train_toy

log = logging.getLogger(__name__)

AttackFn = Callable[[Classifier, np.ndarray, int, AttackConfig, int], AttackResult]


class AttributionCache:
    """Per-example IG scores shared across grid cells (they do not depend on K or strategy)."""

    def __init__(self, model: Classifier, steps: int):
        self.model = model
        self.steps = steps
        self._maps: dict[int, AttributionMap] = {}

    def get(self, index: int, x, y: int) -> AttributionMap:
        if index not in self._maps:
            self._maps[index] = integrated_gradients(self.model, x, None, y, self.steps)
        return self._maps[index]


def _attack_one(model, x, y, config, index, cache: Optional[AttributionCache]) -> AttackResult:
    selection = None
    if config.attack != "jsma":
        # per-example stream so random selections differ between images
        seed = [config.seed, index]
        if config.strategy == "random":
            idx = rank_pixels(np.zeros(x.size), "random", config.pixels, seed)
        else:
            scores = (cache.get(index, x, y) if cache is not None
                      else integrated_gradients(model, x, None, y, config.ig_steps)).scores
            idx = rank_pixels(scores, config.strategy, config.pixels)
        if config.pixels > x.size:
            raise UsageError(f"pixel budget K={config.pixels} exceeds N={x.size}")
        selection = selection_from_indices(x, idx, model.input_shape)
    return run_attack(model, x, y, config, selection, index)


def eligible_indices(model: Classifier, dataset: SyntheticDataset, limit: Optional[int] = None) -> list[int]:
    """Dataset positions the model classifies correctly, in order, at most ``limit``."""
    pred = np.argmax(forward_batch(model, dataset.X), axis=1)
    idx = [int(i) for i in np.flatnonzero(pred == dataset.y)]
    return idx if limit is None else idx[:limit]


def evaluate_attack(model: Classifier, dataset: SyntheticDataset, config: AttackConfig,
                    limit: Optional[int] = None, jobs: int = 1, attack_fn: Optional[AttackFn] = None,
                    cache: Optional[AttributionCache] = None) -> tuple[MetricsRow, list[dict]]:
    """Attack every correctly classified example (up to ``limit``) and aggregate.

    ``attack_fn(model, x, y, config, index)`` replaces the built-in dispatch.
    """
    if dataset.X.shape[1] != model.n_inputs:
        raise UsageError(f"dataset has {dataset.X.shape[1]} components per image, model expects {model.n_inputs}")
    todo = eligible_indices(model, dataset, limit)
    if not todo:
        raise EvaluationError("no correctly classified examples to attack")
    if cache is None and config.attack != "jsma" and config.strategy != "random":
        cache = AttributionCache(model, config.ig_steps)

    def one(i):
        x, y = dataset.X[i], int(dataset.y[i])
        if attack_fn is not None:
            res = attack_fn(model, x, y, config, i)
        else:
            res = _attack_one(model, x, y, config, i, cache)
        return res.record(config)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, todo))
    else:
        records = [one(i) for i in todo]
    return MetricsRow.from_records(records), records


@dataclass
class GridSpec:
    attacks: tuple[str, ...] = ("lpbfgs", "fgsm")
    losses: tuple[str, ...] = ("cw",)
    strategies: tuple[str, ...] = ("ig-top",)
    ks: tuple[int, ...] = (8,)
    examples: int = 200
    seed: int = 0
    c: float = 1e3
    kappa: float = 0.0
    iterations: int = 200
    tolerance: float = 1e-6
    eps_fgsm: float = 1.0
    adam_step: float = 0.1
    ig_steps: int = 256
    model: Optional[str] = None
    train: TrainSpec = field(default_factory=TrainSpec)

    def __post_init__(self):
        self.attacks, self.losses, self.strategies = tuple(self.attacks), tuple(self.losses), tuple(self.strategies)
        self.ks = tuple(int(k) for k in self.ks)
        for name, allowed, values in (("attack", ATTACKS, self.attacks), ("loss", LOSSES, self.losses),
                                      ("strategy", STRATEGIES, self.strategies)):
            bad = [v for v in values if v not in allowed]
            if bad or not values:
                raise UsageError(f"grid {name} values {bad or '[]'} invalid; expected a subset of {allowed}")
        if not self.ks or min(self.ks) < 1:
            raise UsageError("grid ks must be non-empty with every K >= 1")
        if self.examples < 1:
            raise UsageError("grid examples must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown grid fields: {sorted(unknown)}")
        doc = dict(doc)
        if "train" in doc:
            train = dict(doc["train"])
            for key in ("shape", "hidden"):
                if key in train:
                    train[key] = tuple(train[key])
            doc["train"] = TrainSpec(**train)
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return json.loads(json.dumps(d))

    def base_config(self) -> AttackConfig:
        return AttackConfig(c=self.c, kappa=self.kappa, iterations=self.iterations, tolerance=self.tolerance,
                            eps_fgsm=self.eps_fgsm, adam_step=self.adam_step, seed=self.seed,
                            ig_steps=self.ig_steps)

    def cells(self) -> list[AttackConfig]:
        base = self.base_config()
        out = []
        for attack in self.attacks:
            losses = self.losses if attack == "lpbfgs" else ("cw",)
            strategies = ("ig-top",) if attack == "jsma" else self.strategies
            for k in self.ks:
                for strategy in strategies:
                    for loss in losses:
                        out.append(replace(base, attack=attack, loss=loss, strategy=strategy, pixels=k))
        return out


def format_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_fields())
    return buf.getvalue()


def prepare_model(grid: GridSpec):
    """Return ``(model, test_set)``; trains from ``grid.train`` unless ``grid.model`` names a file."""
    trained, report, (_, test) = train_toy(grid.train)
    if grid.model is None:
        log.info("trained toy model: train acc %.4f, test acc %.4f", report.train_accuracy, report.test_accuracy)
        return trained, test
    model = load_model(grid.model)
    if model.n_inputs != test.X.shape[1]:
        raise UsageError(f"model {grid.model} expects {model.n_inputs} inputs, grid data has {test.X.shape[1]}")
    return model, test


def run_experiment(grid: GridSpec, out_dir, jobs: int = 1, model: Optional[Classifier] = None,
                   dataset: Optional[SyntheticDataset] = None) -> dict:
    """Evaluate every grid cell and write ``report.csv``, ``records.jsonl`` and ``manifest.json``."""
    if model is None or dataset is None:
        model, dataset = prepare_model(grid)
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from exc
    cache = AttributionCache(model, grid.ig_steps)
    rows, all_records = [], []
    for cfg in grid.cells():
        row, records = evaluate_attack(model, dataset, cfg, grid.examples, jobs, cache=cache)
        log.info("%s/%s/%s k=%d: ASR %.2f%%", cfg.attack, cfg.loss_name, cfg.strategy_name, cfg.pixels, row.asr)
        rows.append(row)
        all_records.extend(records)
    spec = grid.to_dict()
    manifest = {
        "grid": spec,
        "config_hash": hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest(),
        "seeds": {"attack": grid.seed, "train": grid.train.seed},
        "versions": {"lpbfgs": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "cells": len(rows),
        "eligible_examples": rows[0].attempted if rows else 0,
    }
    paths = {name: os.path.join(out_dir, name) for name in ("report.csv", "records.jsonl", "manifest.json")}
    try:
        atomic_write_text(paths["report.csv"], format_csv(rows))
        atomic_write_text(paths["records.jsonl"], "".join(json.dumps(r) + "\n" for r in all_records))
        atomic_write_text(paths["manifest.json"], json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing report to {out_dir}: {exc.strerror}") from exc
    return {"paths": paths, "rows": rows}
