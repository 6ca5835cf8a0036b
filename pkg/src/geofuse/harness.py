"""Ablation and layer-sweep experiment drivers.

Every row of an experiment table trains under the same corpus, budget, and
seed list; only the named overrides differ. Rows report the median holdout
accuracy over the seed list (plus the per-seed values), which keeps the CSVs
deterministic; wall-clock timings go to a separate JSON sidecar because they
never can be.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Resolved
from .errors import ConfigError, GeofuseError
from .model import Model, SchemeConfig
from .scene import ProviderTables, SceneSample, generate_corpus
from .scoring import write_csv
from .training import (
    Prepared,
    TrainConfig,
    evaluate,
    model_config_for,
    prepare,
    split_indices,
    train,
)

# Named experiment rows: scheme-block overrides plus train-block overrides.
# The first six are the integration schemes; the rest toggle one component
# of the full injection scheme at a time.
VARIANTS: dict[str, tuple[dict, dict]] = {
    "baseline": ({"scheme": "baseline"}, {}),
    "swap": ({"scheme": "swap"}, {}),
    "distill": ({"scheme": "distill"}, {}),
    "add": ({"scheme": "add"}, {}),
    "prefuse": ({"scheme": "prefuse"}, {}),
    "inject": ({"scheme": "inject"}, {}),
    "inject-noattn": ({"scheme": "inject", "use_attention": False}, {}),
    "inject-shared": ({"scheme": "inject", "share_fuser": True}, {}),
    "inject-nores": ({"scheme": "inject", "use_residual": False}, {}),
    "inject-nocam": ({"scheme": "inject", "use_camera": False}, {}),
    "inject-s2": ({"scheme": "inject", "scale": 2}, {}),
    "inject-s8": ({"scheme": "inject", "scale": 8}, {}),
    "inject-onestage": ({"scheme": "inject"}, {"one_stage": True}),
}

SCHEME_VARIANTS = ("baseline", "swap", "distill", "add", "prefuse", "inject")


@dataclass
class RunOutcome:
    model: Model
    history: list[dict]
    accuracy: float
    mean_ce: float


def build_corpus(resolved: Resolved) -> list[SceneSample]:
    return generate_corpus(resolved.scene, resolved.corpus_samples, resolved.corpus_seed)


def prepare_data(resolved: Resolved, samples: list[SceneSample]) -> Prepared:
    tables = ProviderTables(resolved.scene)
    return prepare(samples, tables, resolved.scene, resolved.rig)


def run_training(resolved: Resolved, data: Prepared, scfg: SchemeConfig, tcfg: TrainConfig) -> RunOutcome:
    """Train one model from scratch; the train seed also seeds the init."""
    mcfg = model_config_for(resolved.scene, data.layout, **resolved.model_kwargs)
    model = Model(mcfg, scfg, data.layout, seed=tcfg.seed)
    history = train(model, data, tcfg)
    train_idx, hold_idx = split_indices(len(data), tcfg.holdout_frac)
    acc, ce = evaluate(model, data, hold_idx if hold_idx.size else train_idx)
    return RunOutcome(model=model, history=history, accuracy=acc, mean_ce=ce)


def _with_seed(tcfg: TrainConfig, seed: int, overrides: dict) -> TrainConfig:
    d = tcfg.to_dict()
    d.update(overrides)
    d["seed"] = seed
    return TrainConfig.from_dict(d)


def _scheme_with(base: dict, overrides: dict) -> SchemeConfig:
    return SchemeConfig.from_dict({**base, **overrides})


def _run_row(
    name: str,
    resolved: Resolved,
    data: Prepared,
    scfg: SchemeConfig,
    train_overrides: dict,
    seeds: list[int],
) -> tuple[list, float]:
    t0 = time.perf_counter()
    accs = []
    for s in seeds:
        try:
            accs.append(run_training(resolved, data, scfg, _with_seed(resolved.train, s, train_overrides)).accuracy)
        except GeofuseError as e:
            raise type(e)(f"[{name}, seed {s}] {e}") from e
    return accs, time.perf_counter() - t0


def _seed_list(resolved: Resolved, n_seeds: int) -> list[int]:
    if n_seeds < 1:
        raise ConfigError(f"need at least one seed, got {n_seeds}")
    return [resolved.train.seed + k for k in range(n_seeds)]


def _emit(out_dir, header, rows, timings) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", header, rows)
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")


def ablate(
    resolved: Resolved,
    data: Prepared,
    variants: list[str] | None = None,
    n_seeds: int = 3,
    out_dir: str | Path | None = None,
) -> tuple[list[str], list[list]]:
    """Train every named variant under one budget; rows sorted as given."""
    names = list(variants) if variants is not None else list(SCHEME_VARIANTS)
    for n in names:
        if n not in VARIANTS:
            raise ConfigError(f"unknown variant {n!r}, expected one of {sorted(VARIANTS)}")
    seeds = _seed_list(resolved, n_seeds)
    header = ["name", "scheme", "median_accuracy"] + [f"accuracy_seed{s}" for s in seeds]
    rows, timings = [], {}
    for name in names:
        scheme_over, train_over = VARIANTS[name]
        scfg = _scheme_with(resolved.raw["scheme"], scheme_over)
        accs, elapsed = _run_row(name, resolved, data, scfg, train_over, seeds)
        rows.append([name, scfg.scheme, float(np.median(accs))] + accs)
        timings[name] = elapsed
    _emit(out_dir, header, rows, timings)
    return header, rows


def layer_sweep(
    resolved: Resolved,
    data: Prepared,
    n_seeds: int = 3,
    out_dir: str | Path | None = None,
) -> tuple[list[str], list[list]]:
    """Baseline, each single injection point, then all points at once."""
    n_layers = model_config_for(resolved.scene, data.layout, **resolved.model_kwargs).layers
    seeds = _seed_list(resolved, n_seeds)
    base_scheme = resolved.raw["scheme"]
    jobs: list[tuple[str, SchemeConfig]] = [("baseline", _scheme_with(base_scheme, {"scheme": "baseline"}))]
    for i in range(1, n_layers + 1):
        jobs.append((f"layer_{i}", _scheme_with(base_scheme, {"scheme": "inject", "inject_layers": (i,)})))
    jobs.append(("full", _scheme_with(base_scheme, {"scheme": "inject", "inject_layers": None})))
    header = ["name", "inject_layers", "median_accuracy"] + [f"accuracy_seed{s}" for s in seeds]
    rows, timings = [], {}
    for name, scfg in jobs:
        points = "" if scfg.scheme == "baseline" else ",".join(map(str, scfg.resolved_layers(n_layers)))
        accs, elapsed = _run_row(name, resolved, data, scfg, {}, seeds)
        rows.append([name, points, float(np.median(accs))] + accs)
        timings[name] = elapsed
    _emit(out_dir, header, rows, timings)
    return header, rows
