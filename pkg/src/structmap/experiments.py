"""Desk-scale training runs with checkpoints cached by configuration.

A :class:`DeskRun` fixes everything that determines a trained model (data
seeds and sizes, step count, model settings, CPU budget). Its hash names
the cached checkpoint, so a run is trained once and then reloaded.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .amn import AMN, AmnConfig, Trainer
from .evaluate import EvalReport, evaluate, model_predictor
from .synth import desk_params, generate

log = logging.getLogger(__name__)

CACHE_ENV = "STRUCTMAP_CACHE"
DEFAULT_CACHE = Path(__file__).resolve().parents[2] / ".cache" / "desk-runs"


@dataclass(frozen=True)
class DeskRun:
    train_n: int = 3000
    train_seed: int = 1
    test_n: int = 300
    test_seed: int = 2
    steps: int = 15000
    cpu_budget: float = 7200.0
    model: dict = field(default_factory=dict)

    def config(self) -> AmnConfig:
        return AmnConfig.from_dict(self.model)

    def key(self) -> str:
        blob = json.dumps({**asdict(self), "model": self.config().to_dict()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def train_set(self):
        return generate(self.train_n, desk_params(), self.train_seed)

    def test_set(self):
        return generate(self.test_n, desk_params(), self.test_seed)


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, DEFAULT_CACHE))


def checkpoint_path(run: DeskRun) -> Path:
    return cache_dir() / f"{run.key()}.bin"


def train(run: DeskRun, progress_every: int = 500) -> tuple[AMN, dict]:
    """Train from scratch, stopping at ``run.steps`` or when the CPU budget runs out."""
    model = AMN(run.config())
    trainer = Trainer(model)
    examples = run.train_set()
    cpu0, wall0 = time.process_time(), time.time()
    order: list[int] = []
    steps = 0
    while steps < run.steps and time.process_time() - cpu0 < run.cpu_budget:
        if not order:
            order = list(trainer.rng.permutation(len(examples)))
        trainer.step(examples[order.pop()])
        steps += 1
        if progress_every and steps % progress_every == 0:
            log.info("step %d  loss_corr %.3f  loss_ci %.3f  cpu %.0fs", steps,
                     np.mean(trainer.log.loss_corr[-progress_every:]),
                     np.mean(trainer.log.loss_ci[-progress_every:]), time.process_time() - cpu0)
    meta = {
        "run": asdict(run),
        "key": run.key(),
        "steps": steps,
        "cpu_seconds": time.process_time() - cpu0,
        "wall_seconds": time.time() - wall0,
        "coverage": trainer.log.coverage,
        "final_loss_corr": float(np.mean(trainer.log.loss_corr[-500:])) if steps else None,
        "final_loss_ci": float(np.mean(trainer.log.loss_ci[-500:])) if steps else None,
    }
    return model, meta


def trained(run: DeskRun, retrain: bool = False) -> tuple[AMN, dict]:
    """The cached model for ``run``, training it first if needed."""
    from .autodiff import load_tensors
    path = checkpoint_path(run)
    if path.exists() and not retrain:
        _, meta = load_tensors(path)
        return AMN.load(path), meta["desk_run"]
    model, meta = train(run)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    model.save(tmp, {"desk_run": meta})
    tmp.replace(path)
    return model, meta


def untrained(run: DeskRun) -> AMN:
    return AMN(run.config())


def evaluate_run(model: AMN, run: DeskRun, r: int, seed: int = 0, limit: int | None = None) -> EvalReport:
    data = run.test_set()
    if limit is not None:
        data = data[:limit]
    return evaluate(model_predictor(model, r, seed), data, r)
