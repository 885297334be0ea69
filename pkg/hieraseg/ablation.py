"""
`hieraseg` ablation grid.

Three suites, each run over a list of seeds on synthetic data:

    bhccm    flat, no-fusion, c2f, f2c, bidir+hce, bidir+hsc
    translu  scratch, pretrained, cdks, cdks+cdsa
    jsps     argmax vs jsps decoding of one trained bidir+hsc network

A unit of work regenerates its own data from its seed, so units are
independent and may run in a process pool. Results are sorted by
(row, seed) before they are reported; the JSON summary of a grid depends only
on its config.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from hieraseg import settings
from hieraseg.datagen import SceneSpec, generate, make_crop_target
from hieraseg.evalkit import HierarchicalReport
from hieraseg.exceptions import ValidationError
from hieraseg.hierarchy import Hierarchy, fixture_path, load_hierarchy
from hieraseg.models.segnet import NetConfig, ToySegNet
from hieraseg.training import TrainConfig, evaluate_model, train_model
from hieraseg.translu import build_translu, load_mapping, transfer_train

logger = logging.getLogger(__name__)

BHCCM_ROWS = {
    "flat": {"head": "flat", "fusion": "none", "loss": "ce"},
    "no-fusion": {"head": "bhccm", "fusion": "none", "loss": "hsc"},
    "c2f": {"head": "bhccm", "fusion": "c2f", "loss": "hsc"},
    "f2c": {"head": "bhccm", "fusion": "f2c", "loss": "hsc"},
    "bidir+hce": {"head": "bhccm", "fusion": "bidirectional", "loss": "hce"},
    "bidir+hsc": {"head": "bhccm", "fusion": "bidirectional", "loss": "hsc"},
}
TRANSLU_ROWS = ("scratch", "pretrained", "cdks", "cdks+cdsa")
JSPS_ROWS = ("argmax", "jsps")
SUITES = {"bhccm": tuple(BHCCM_ROWS), "translu": TRANSLU_ROWS, "jsps": JSPS_ROWS}


@dataclass(frozen=True)
class AblationConfig:
    suite: str
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    iterations: int = settings.ITERATIONS
    transfer_iterations: int = 300
    n_images: int = 40
    val_fraction: float = 0.2
    image_size: int = settings.IMAGE_SIZE
    batch_size: int = settings.BATCH_SIZE
    lr: float = settings.LEARNING_RATE
    momentum: float = settings.MOMENTUM
    alpha: float = 1.0
    widths: tuple[int, ...] = settings.ENCODER_WIDTHS
    decoder_dim: int = settings.DECODER_DIM
    source_hierarchy: Optional[str] = None
    target_hierarchy: Optional[str] = None
    mapping: Optional[str] = None

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValidationError(f"Unknown suite {self.suite!r}; expected one of {tuple(SUITES)}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.seeds:
            raise ValidationError("An ablation needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError(f"Duplicate seeds in {self.seeds}")
        if self.n_images < 2:
            raise ValidationError(f"n_images must be at least 2, got {self.n_images}")

    @property
    def rows(self) -> tuple[str, ...]:
        return SUITES[self.suite]

    def scene(self, seed: int) -> SceneSpec:
        return SceneSpec(image_size=self.image_size, seed=seed)

    def net_config(self, hierarchy: Hierarchy, head: str = "bhccm", fusion: str = "bidirectional") -> NetConfig:
        return NetConfig.for_hierarchy(
            hierarchy, head=head, fusion=fusion, widths=self.widths, decoder_dim=self.decoder_dim
        )

    def train_config(self, seed: int, loss: str = "hsc", iterations: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations if iterations is None else iterations,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            loss=loss,
            alpha=self.alpha,
            eval_every=0,
            seed=seed,
        )

    def hierarchies(self) -> tuple[Hierarchy, Hierarchy]:
        source = load_hierarchy(self.source_hierarchy or fixture_path("mm5b.json"))
        target = load_hierarchy(self.target_hierarchy or fixture_path("crop.json"))
        return source, target

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        data["widths"] = list(self.widths)
        return data


def _cell(row: str, seed: int, report: HierarchicalReport, final_loss: Optional[float]) -> dict[str, Any]:
    return {
        "row": row,
        "seed": seed,
        "miou": {r.level: r.miou for r in report.levels},
        "macc": {r.level: r.macc for r in report.levels},
        "consistency_rate": report.consistency_rate,
        "final_loss": final_loss,
    }


def _source_split(cfg: AblationConfig, hierarchy: Hierarchy, seed: int):
    dataset = generate(cfg.scene(seed), hierarchy, cfg.n_images, workers=1)
    return dataset.split(cfg.val_fraction)


def _bhccm_unit(job: tuple[AblationConfig, str, int]) -> list[dict[str, Any]]:
    cfg, row, seed = job
    hierarchy, _ = cfg.hierarchies()
    train, val = _source_split(cfg, hierarchy, seed)
    options = BHCCM_ROWS[row]
    net = ToySegNet(cfg.net_config(hierarchy, options["head"], options["fusion"]), seed=seed)
    result = train_model(net, net.trainable_parameters(), train, hierarchy, cfg.train_config(seed, options["loss"]), label=row)
    report = evaluate_model(net, val, hierarchy, batch_size=cfg.batch_size)
    return [_cell(row, seed, report, result.losses[-1] if result.losses else None)]


def _jsps_unit(job: tuple[AblationConfig, str, int]) -> list[dict[str, Any]]:
    cfg, _, seed = job
    hierarchy, _ = cfg.hierarchies()
    train, val = _source_split(cfg, hierarchy, seed)
    net = ToySegNet(cfg.net_config(hierarchy), seed=seed)
    result = train_model(net, net.trainable_parameters(), train, hierarchy, cfg.train_config(seed), label="jsps")
    final_loss = result.losses[-1] if result.losses else None
    return [
        _cell(mode, seed, evaluate_model(net, val, hierarchy, mode=mode, batch_size=cfg.batch_size), final_loss)
        for mode in JSPS_ROWS
    ]


def pretrain_branch2(cfg: AblationConfig, hierarchy: Hierarchy, seed: int) -> ToySegNet:
    """A bidirectional hsc network trained on the source task of `seed`."""
    train, _ = _source_split(cfg, hierarchy, seed)
    net = ToySegNet(cfg.net_config(hierarchy), seed=seed, label="branch2")
    train_model(net, net.trainable_parameters(), train, hierarchy, cfg.train_config(seed), label="branch2")
    return net


def _translu_unit(job: tuple[AblationConfig, str, int]) -> list[dict[str, Any]]:
    cfg, _, seed = job
    source, target = cfg.hierarchies()
    mapping = load_mapping(cfg.mapping or fixture_path("crop_mapping.json"), source, target)
    branch2 = pretrain_branch2(cfg, source, seed)
    crop = make_crop_target(cfg.scene(seed), source, target, cfg.n_images, workers=1)
    train, val = crop.split(cfg.val_fraction)
    cells = []
    for variant in TRANSLU_ROWS:
        # Same Branch 1 draw and batch stream for every variant of a seed
        branch1 = ToySegNet(cfg.net_config(target), seed=seed, label="branch1")
        model = build_translu(variant, branch2, branch1, mapping=mapping, seed=seed)
        train_cfg = cfg.train_config(seed, iterations=cfg.transfer_iterations)
        result = transfer_train(model, train, target, train_cfg)
        report = evaluate_model(model, val, target, batch_size=cfg.batch_size)
        cells.append(_cell(variant, seed, report, result.losses[-1] if result.losses else None))
    return cells


UNITS = {"bhccm": _bhccm_unit, "translu": _translu_unit, "jsps": _jsps_unit}


def _jobs(cfg: AblationConfig) -> list[tuple[AblationConfig, str, int]]:
    if cfg.suite == "bhccm":
        return [(cfg, row, seed) for row in cfg.rows for seed in cfg.seeds]
    # translu and jsps units cover every row of one seed
    return [(cfg, "*", seed) for seed in cfg.seeds]


def _run_unit(job: tuple[AblationConfig, str, int]) -> list[dict[str, Any]]:
    cfg, row, seed = job
    cells = UNITS[cfg.suite](job)
    logger.info("Ablation %s unit (%s, seed %d) finished", cfg.suite, row, seed)
    return cells


@dataclass
class AblationResult:
    config: AblationConfig
    cells: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        order = {row: i for i, row in enumerate(self.config.rows)}
        self.cells.sort(key=lambda c: (order[c["row"]], c["seed"]))

    @property
    def finest_level(self) -> str:
        return list(self.cells[0]["miou"])[-1] if self.cells else ""

    def finest_miou(self, row: str) -> dict[int, float]:
        level = self.finest_level
        return {c["seed"]: c["miou"][level] for c in self.cells if c["row"] == row}

    def mean_finest_miou(self) -> dict[str, float]:
        return {row: float(np.mean(list(self.finest_miou(row).values()))) for row in self.config.rows}

    def best_row_counts(self, rows: Optional[tuple[str, ...]] = None) -> dict[str, int]:
        """How many seeds each row wins on finest-level mIoU (ties go to the earlier row)."""
        rows = rows or self.config.rows
        counts = {row: 0 for row in rows}
        for seed in self.config.seeds:
            scores = [self.finest_miou(row)[seed] for row in rows]
            counts[rows[int(np.argmax(scores))]] += 1
        return counts

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "finest_level": self.finest_level,
            "mean_finest_miou": self.mean_finest_miou(),
            "cells": self.cells,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        seeds = self.config.seeds
        header = ["row", "mean", *(f"seed {s}" for s in seeds)]
        means = self.mean_finest_miou()
        rows = []
        for row in self.config.rows:
            per_seed = self.finest_miou(row)
            rows.append([row, f"{100 * means[row]:.2f}", *(f"{100 * per_seed[s]:.2f}" for s in seeds)])
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        lines = [f"{self.config.suite}: {self.finest_level} mIoU (%)"]
        lines += ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [header, *rows]]
        return "\n".join(lines) + "\n"


def run_ablation(cfg: AblationConfig, workers: int = settings.THREADS) -> AblationResult:
    jobs = _jobs(cfg)
    workers = max(1, min(workers, settings.THREADS, len(jobs)))
    logger.info("Running %s ablation: %d units on %d workers", cfg.suite, len(jobs), workers)
    if workers == 1:
        batches = [_run_unit(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_unit, jobs))
    return AblationResult(cfg, [cell for batch in batches for cell in batch])
