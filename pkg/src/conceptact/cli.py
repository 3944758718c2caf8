"""``conceptact`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

log = logging.getLogger("conceptact")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run config (default: $CONCEPTACT_CONFIG)")
    p.add_argument("--set", dest="assign", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conceptact", description="Concept-supervised action chunking at desk scale.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate expert demonstrations")
    _add_config_flags(p)
    p.add_argument("--task", choices=["sorting", "ordering"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--holdout-episodes", type=int)
    p.add_argument("--seed", type=int, help="data seed")
    p.add_argument("--out", required=True, help="output directory (train/ and holdout/ inside)")

    p = sub.add_parser("enumerate-tasks", help="print scenario partitions and valid orderings")
    _add_config_flags(p)
    p.add_argument("--task", choices=["sorting", "ordering"], default="ordering")
    p.add_argument("--all-rules", action="store_true", help="also list counts for every interpretation")

    p = sub.add_parser("train", help="train one policy")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--holdout")
    p.add_argument("--method", choices=["act", "conceptact_transformer", "conceptact_heads"])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--fraction", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="closed-loop rollouts of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=["sorting", "ordering"])
    p.add_argument("--split", choices=["heldout", "train"], default="heldout")
    p.add_argument("--episodes-per-scenario", type=int)
    p.add_argument("--no-ensemble", action="store_true")
    p.add_argument("--out", required=True, help="scores CSV")
    p.add_argument("--trace", help="also write the per-step trace of the first rollout to this CSV")

    p = sub.add_parser("compare", help="PoI and optimality gap between two score CSVs")
    _add_config_flags(p)
    p.add_argument("scores_x")
    p.add_argument("scores_y")
    p.add_argument("--reps", type=int)

    p = sub.add_parser("sweep", help="train and evaluate the method x fraction x seed grid")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--holdout")
    p.add_argument("--methods")
    p.add_argument("--fractions")
    p.add_argument("--seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grad-check", help="finite-difference suite (float64)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export", help="re-emit the CSV bundle of a run directory")
    _add_config_flags(p)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--attention", help="dataset directory: also dump concept attention maps for its first episode")
    return ap


def _resolve(args, flag_map: dict[str, str]) -> tuple[dict, str]:
    from .config import load_config, merge, parse_assignments
    cfg, text = load_config(args.config, parse_assignments(args.assign))
    flags: dict = {}
    for attr, dotted in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            section, key = dotted.split(".")
            flags.setdefault(section, {})[key] = value
    return merge(cfg, flags, "flags"), text


def _write_manifest(out: Path, cfg: dict, text: str, **extra) -> None:
    from .sweep import run_manifest
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_manifest.json").write_text(json.dumps(run_manifest(cfg, config_text=text, **extra), indent=1))


def _scenarios(cfg: dict, task: str):
    from .sim import enumerate_ordering_scenarios, enumerate_sorting_scenarios
    if task == "sorting":
        return enumerate_sorting_scenarios(rule=cfg["sim"]["sorting_rule"])
    return enumerate_ordering_scenarios(holdout_fraction=cfg["sim"]["ordering_holdout_fraction"],
                                        seed=cfg["sim"]["data_seed"])


def cmd_gen_data(args) -> int:
    from .dataset import save_dataset
    from .sim import generate_dataset, schema_for
    cfg, text = _resolve(args, {"task": "sim.task", "episodes": "sim.episodes",
                                "holdout_episodes": "sim.holdout_episodes", "seed": "sim.data_seed"})
    sim = cfg["sim"]
    part = _scenarios(cfg, sim["task"])
    kw = {"include_location": sim["include_location"]} if sim["task"] == "sorting" else {}
    schema = schema_for(sim["task"], **kw)
    total = sim["episodes"] + sim["holdout_episodes"]
    full = generate_dataset(part.train, total, seed=sim["data_seed"], schema=schema)
    out = Path(args.out)
    save_dataset(full.subset(range(sim["episodes"])), out / "train")
    if sim["holdout_episodes"]:
        save_dataset(full.subset(range(sim["episodes"], total)), out / "holdout")
    _write_manifest(out, cfg, text, seed=sim["data_seed"])
    log.info("wrote %d + %d %s episodes to %s", sim["episodes"], sim["holdout_episodes"], sim["task"], out)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    from .sim import OrderingRules, all_rule_combinations, enumerate_valid_orderings, nearest_to_reference_count
    from .sim.scenarios import export_scenarios
    cfg, _ = _resolve(args, {})
    if args.task == "sorting":
        print(export_scenarios(_scenarios(cfg, "sorting")))
        return EXIT_OK
    rules = OrderingRules()
    valid = enumerate_valid_orderings(rules)
    print(f"# flags: {json.dumps(rules.flags())}")
    for seq in valid:
        print(" > ".join(o.label for o in seq))
    print(f"count: {len(valid)} (reference count 26)")
    best, n = nearest_to_reference_count()
    print(f"nearest to 26: {n} with flags {json.dumps(best.flags())}")
    if args.all_rules:
        for r in all_rule_combinations():
            print(f"{len(enumerate_valid_orderings(r)):4d}  {json.dumps(r.flags())}")
    return EXIT_OK


def _load_sets(args):
    from .dataset import load_dataset
    data = load_dataset(args.data)
    holdout = load_dataset(args.holdout) if args.holdout else None
    return data, holdout


def cmd_train(args) -> int:
    from .config import model_config, train_config
    from .train_eval import save_policy, train
    cfg, text = _resolve(args, {"method": "model.method", "steps": "train.max_steps", "seed": "train.seed",
                                "lr": "train.lr", "fraction": "train.fraction"})
    data, holdout = _load_sets(args)
    mcfg, tcfg = model_config(cfg), train_config(cfg)
    _check_dims(mcfg, data)
    out = Path(args.out)
    res = train(mcfg, tcfg, data, holdout, out_dir=out)
    save_policy(res.policy, out / "final", step=tcfg.max_steps, train=cfg["train"], seed=tcfg.seed)
    if res.evals:
        import csv
        with open(out / "holdout.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, list(res.evals[-1]))
            w.writeheader()
            w.writerows(res.evals)
    _write_manifest(out, cfg, text, seed=tcfg.seed)
    print(json.dumps({"final": res.losses[-1] if res.losses else None,
                      "holdout": res.evals[-1] if res.evals else None}))
    return EXIT_OK


def _check_dims(mcfg, data) -> None:
    dims = data.dims
    want = {"d_s": mcfg.d_s, "d_a": mcfg.d_a, "H": mcfg.image_size, "W": mcfg.image_size, "cameras": mcfg.cameras}
    if dims != want:
        raise CliError(EXIT_VALIDATION, "validation", f"dataset dims {dims} do not match model {want}")


def cmd_eval(args) -> int:
    from .act import EnsembledController
    from .train_eval import evaluate_policy, load_policy, rollout, write_scores_csv
    cfg, text = _resolve(args, {"task": "sim.task", "episodes_per_scenario": "eval.episodes_per_scenario"})
    policy, meta = load_policy(args.checkpoint)
    part = _scenarios(cfg, cfg["sim"]["task"])
    scen = part.heldout if args.split == "heldout" else part.train
    ctl = EnsembledController(policy, ensemble=cfg["eval"]["ensemble"] and not args.no_ensemble,
                              decay=cfg["eval"]["ensemble_decay"])
    recs = evaluate_policy(ctl, scen, cfg["eval"]["episodes_per_scenario"], method=policy.cfg.method,
                           seed=int(meta.get("seed", 0)), checkpoint=int(meta.get("step", 0)))
    write_scores_csv(recs, args.out)
    if args.trace and scen:
        rollout(ctl, scen[0], noise_seed=10_000)       # same seed as the first scored episode
        ctl.trace.to_csv(args.trace)
    print(json.dumps({"episodes": len(recs), "mean_score": sum(r.score for r in recs) / max(len(recs), 1)}))
    return EXIT_OK


def cmd_compare(args) -> int:
    import numpy as np
    from .sim.scoring import MAX_SCORE
    from .stats import optimality_gap, probability_of_improvement
    from .train_eval import read_scores_csv
    cfg, _ = _resolve(args, {"reps": "eval.bootstrap_reps"})
    reps, conf = cfg["eval"]["bootstrap_reps"], cfg["eval"]["confidence"]
    rx, ry = read_scores_csv(args.scores_x), read_scores_csv(args.scores_y)
    if not rx or not ry:
        raise CliError(EXIT_VALIDATION, "validation", "empty score table")

    def by_task(recs):
        out: dict = {}
        for r in recs:
            out.setdefault(r.task, {}).setdefault(r.seed, []).append(r.score / MAX_SCORE[r.task])
        return {t: [float(np.mean(v)) for _, v in sorted(seeds.items())] for t, seeds in out.items()}

    poi = probability_of_improvement(by_task(rx), by_task(ry), reps, conf)
    print(f"poi {poi.value:.3f} [{poi.low:.3f}, {poi.high:.3f}]")
    for name, recs in (("x", rx), ("y", ry)):
        for task in sorted({r.task for r in recs}):
            seeds: dict = {}
            for r in recs:
                if r.task == task:
                    seeds.setdefault(r.seed, []).append(r.score)
            lens = {len(v) for v in seeds.values()}
            table = np.array([seeds[s] for s in sorted(seeds)]) if len(lens) == 1 else \
                np.concatenate([seeds[s] for s in sorted(seeds)])
            g = optimality_gap(table, MAX_SCORE[task], reps, conf)
            print(f"gap_{name} {task} {g.value:.3f} [{g.low:.3f}, {g.high:.3f}]")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .config import ConfigError, model_config, train_config
    from .sweep import sweep
    cfg, text = _resolve(args, {"methods": "train.methods", "fractions": "train.fractions", "seeds": "train.seeds",
                                "steps": "train.max_steps"})
    data, holdout = _load_sets(args)
    mcfg, tcfg = model_config(cfg), train_config(cfg)
    _check_dims(mcfg, data)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    part = _scenarios(cfg, data.task or cfg["sim"]["task"])
    sweep(data, part.heldout, args.out, mcfg, tcfg, cfg["train"]["fractions"], cfg["train"]["seeds"],
          cfg["train"]["methods"], holdout, cfg["eval"]["episodes_per_scenario"], jobs=args.jobs,
          bootstrap_reps=cfg["eval"]["bootstrap_reps"], config_echo={"resolved": cfg, "text": text})
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradsuite import max_error, run_suite
    results = run_suite(seed=args.seed)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:40s} {r.max_rel_error:.3e}")
    worst = max_error(results)
    print(f"max rel err {worst:.3e}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_NUMERIC


def cmd_export(args) -> int:
    from .sweep import write_reports
    from .train_eval import read_scores_csv, write_scores_csv
    cfg, _ = _resolve(args, {})
    run, out = Path(args.run), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not run.is_dir():
        raise CliError(EXIT_VALIDATION, "validation", f"run directory not found: {run}")
    for src in sorted(run.rglob("*.csv")):
        if src.name in ("poi.csv", "gap.csv", "curves.csv"):
            continue
        dst = out / src.relative_to(run)
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)
    if (run / "scores.csv").exists():
        recs = read_scores_csv(run / "scores.csv")
        write_scores_csv(recs, out / "scores.csv")
        write_reports(recs, out, cfg["eval"]["bootstrap_reps"])
    if args.attention:
        _export_attention(run, Path(args.attention), out)
    return EXIT_OK


def _export_attention(run: Path, data_dir: Path, out: Path) -> None:
    from .concept_layer import dump_attention_csv
    from .dataset import load_dataset
    from .train_eval import load_policy
    policy, _ = load_policy(run / "final")
    if policy.concept_layer is None:
        raise CliError(EXIT_VALIDATION, "validation", "checkpoint has no concept layer")
    ep = load_dataset(data_dir).episodes[0]
    outp = policy.forward(ep.proprio, ep.images)
    dump_attention_csv(out / "attention.csv", policy.schema, [m.data for m in outp.attention_maps])


COMMANDS = {"gen-data": cmd_gen_data, "enumerate-tasks": cmd_enumerate, "train": cmd_train, "eval": cmd_eval,
            "compare": cmd_compare, "sweep": cmd_sweep, "grad-check": cmd_grad_check, "export": cmd_export}


def main(argv=None) -> int:
    from .concepts import ConceptError
    from .config import ConfigError
    from .dataset import DatasetError
    from .nn.params import CheckpointError
    from .nn.tensor import NonFiniteError, ShapeError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        err = exc
    except ConfigError as exc:
        err = CliError(EXIT_CONFIG, "config", str(exc))
    except NonFiniteError as exc:
        err = CliError(EXIT_NUMERIC, "numeric", str(exc))
    except (DatasetError, CheckpointError, ConceptError, ShapeError, FileNotFoundError, ValueError) as exc:
        err = CliError(EXIT_VALIDATION, "validation", str(exc))
    print(f"error[{err.kind}]: {err}".replace("\n", " "), file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
