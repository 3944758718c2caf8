"""Grid sweeps over method x fraction x seed with CSV reports and a run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .act import ActConfig, METHODS
from .dataset import Dataset
from .nn.optim import AdamW
from .sim.scenarios import Scenario
from .sim.scoring import MAX_SCORE
from .sim.world import SimConfig
from .stats import BOOTSTRAP_REPS, optimality_gap, probability_of_improvement
from .train_eval import (FRACTIONS, DEFAULT_SEEDS, ScoreRecord, TrainConfig, evaluate_policy, train,
                         write_scores_csv)

log = logging.getLogger(__name__)


def build_id() -> str:
    """SHA-1 over the package sources, in the style of a git tree hash."""
    h = hashlib.sha1()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def run_manifest(config: dict, **extra) -> dict:
    return {"build_id": build_id(), "optimizer": AdamW.variant, "config": config, **extra}


@dataclass(frozen=True)
class Cell:
    method: str
    fraction: float
    seed: int

    @property
    def key(self) -> str:
        return f"{self.method}_f{self.fraction:g}_s{self.seed}"


def _run_cell(cell: Cell, model_cfg: ActConfig, train_cfg: TrainConfig, dataset: Dataset,
              holdout: Dataset | None, scenarios: list[Scenario], episodes_per_scenario: int,
              sim_cfg: SimConfig, out_dir: Path) -> tuple[Cell, list[ScoreRecord], list[dict]]:
    mcfg = replace(model_cfg, method=cell.method)
    tcfg = replace(train_cfg, method=cell.method, fraction=cell.fraction, seed=cell.seed)
    cell_dir = out_dir / cell.key
    res = train(mcfg, tcfg, dataset, holdout, out_dir=cell_dir)
    records = evaluate_policy(res.policy, scenarios, episodes_per_scenario, sim_cfg, method=cell.method,
                              seed=cell.seed, checkpoint=tcfg.max_steps)
    records = [replace(r, method=f"{cell.method}@{cell.fraction:g}") for r in records]
    (cell_dir / "manifest.json").write_text(json.dumps(run_manifest(
        {"model": mcfg.to_dict(), "train": asdict(tcfg)}, seed=cell.seed, evals=res.evals), indent=1))
    return cell, records, res.evals


def sweep(dataset: Dataset, scenarios: list[Scenario], out_dir, model_cfg: ActConfig = ActConfig(),
          train_cfg: TrainConfig = TrainConfig(), fractions=FRACTIONS, seeds=DEFAULT_SEEDS, methods=METHODS,
          holdout: Dataset | None = None, episodes_per_scenario: int = 1, sim_cfg: SimConfig = SimConfig(),
          jobs: int = 1, bootstrap_reps: int = BOOTSTRAP_REPS, config_echo: dict | None = None) -> list[ScoreRecord]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [Cell(m, float(f), int(s)) for m in methods for f in fractions for s in seeds]
    args = (model_cfg, train_cfg, dataset, holdout, scenarios, episodes_per_scenario, sim_cfg, out_dir)
    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, c, *args) for c in cells]
            results = [f.result() for f in futures]
    else:
        for c in cells:
            log.info("training %s", c.key)
            results.append(_run_cell(c, *args))
    # keyed merge so the report does not depend on completion order
    results.sort(key=lambda r: (r[0].method, r[0].fraction, r[0].seed))
    records = [rec for _, recs, _ in results for rec in recs]
    write_scores_csv(records, out_dir / "scores.csv")
    write_reports(records, out_dir, bootstrap_reps)
    (out_dir / "manifest.json").write_text(json.dumps(run_manifest(
        config_echo or {"model": model_cfg.to_dict(), "train": asdict(train_cfg)},
        grid={"methods": list(methods), "fractions": list(fractions), "seeds": list(seeds)}), indent=1))
    return records


def _split(label: str) -> tuple[str, str]:
    method, _, frac = label.partition("@")
    return method, frac or "1"


def per_run_scores(records: list[ScoreRecord]) -> dict[tuple[str, str], dict[str, dict[int, float]]]:
    """{(method, fraction): {task: {seed: mean normalised score}}}."""
    acc: dict = {}
    for r in records:
        d = acc.setdefault(_split(r.method), {}).setdefault(r.task, {}).setdefault(r.seed, [])
        d.append(r.score / MAX_SCORE[r.task])
    return {k: {t: {s: float(np.mean(v)) for s, v in seeds.items()} for t, seeds in tasks.items()}
            for k, tasks in acc.items()}


def write_reports(records: list[ScoreRecord], out_dir, bootstrap_reps: int = BOOTSTRAP_REPS) -> None:
    """poi.csv (every ordered method pair within a fraction), gap.csv and curves.csv."""
    out_dir = Path(out_dir)
    runs = per_run_scores(records)
    with open(out_dir / "poi.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fraction", "method_x", "method_y", "poi", "ci_low", "ci_high"])
        for (mx, fx) in sorted(runs):
            for (my, fy) in sorted(runs):
                if fx != fy or set(runs[(mx, fx)]) != set(runs[(my, fy)]):
                    continue
                est = probability_of_improvement(
                    {t: list(v.values()) for t, v in runs[(mx, fx)].items()},
                    {t: list(v.values()) for t, v in runs[(my, fy)].items()}, bootstrap_reps)
                w.writerow([fx, mx, my, *[f"{x:.6f}" for x in est.as_row()]])
    by_cell: dict = {}
    for r in records:
        method, frac = _split(r.method)
        by_cell.setdefault((method, frac, r.task), {}).setdefault(r.seed, []).append(r.score)
    with open(out_dir / "gap.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "fraction", "task", "gap", "ci_low", "ci_high", "definition"])
        for (method, frac, task), seeds in sorted(by_cell.items()):
            table = np.array([seeds[s] for s in sorted(seeds)])
            est = optimality_gap(table, MAX_SCORE[task], bootstrap_reps)
            w.writerow([method, frac, task, *[f"{x:.6f}" for x in est.as_row()],
                        "mean(1 - score/max) over seed, checkpoint, episode"])
    with open(out_dir / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "fraction", "task", "mean_score", "var_score", "n_seeds"])
        for (method, frac, task), seeds in sorted(by_cell.items()):
            per_seed = np.array([np.mean(seeds[s]) for s in sorted(seeds)])
            w.writerow([method, frac, task, f"{per_seed.mean():.6f}", f"{per_seed.var():.6f}", len(per_seed)])
