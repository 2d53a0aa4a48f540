"""Shared protocol for the synthetic noise experiments.

Runs go through the CLI entry point so the metrics files compared for
determinism are exactly the ones a user would get.
"""

from __future__ import annotations

import contextlib
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

from . import cli
from . import config as cfgio
from .synth import DatasetSpec
from .trainer import TrainConfig


def noise_spec(seed: int = 0, closed: float = 0.2, open_: float = 0.0) -> DatasetSpec:
    """C = 50, 200 per class, 32-d inputs."""
    return DatasetSpec(num_classes=50, n_per_class=200, d_in=32, closed_noise_ratio=closed,
                       open_noise_ratio=open_, seed=seed)


def repface_config(seed: int = 0, **overrides) -> TrainConfig:
    return TrainConfig(seed=seed, **overrides)


def baseline_config(config: TrainConfig) -> TrainConfig:
    """Plain margin/mining softmax: no auxiliary samples, splitting never starts."""
    return dataclasses.replace(config, n_aux=0, start_epoch=config.epochs, tau=math.inf)


@dataclass
class RunOutput:
    records: list
    metrics_bytes: bytes
    seconds: float
    exit_code: int

    @property
    def final(self) -> dict:
        return self.records[-1]


def run(spec: DatasetSpec, config: TrainConfig, workdir) -> RunOutput:
    """``gen`` then ``train`` in ``workdir``; returns the parsed metrics."""
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    (work / "spec.cfg").write_text(cfgio.dump(spec))
    (work / "train.cfg").write_text(cfgio.dump(config))
    data = work / "data.rpfd"
    t0 = time.perf_counter()
    with contextlib.redirect_stdout(io.StringIO()):
        code = cli.main(["gen", "--config", str(work / "spec.cfg"), "--out", str(data)])
        if code == 0:
            code = cli.main(["train", "--config", str(work / "train.cfg"), "--data", str(data),
                             "--out", str(work / "run")])
    elapsed = time.perf_counter() - t0
    path = work / "run" / "metrics.jsonl"
    raw = path.read_bytes() if path.exists() else b""
    records = [json.loads(line) for line in raw.decode().splitlines()]
    return RunOutput(records, raw, elapsed, code)
