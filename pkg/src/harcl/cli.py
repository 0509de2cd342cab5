"""Command-line front-end.

    harcl run --config exp.json [--seed 0] [--jobs 2] [--output-dir out] [--strategy icarl,lwf]
              [--sampler random,herding] [--holdout 2..15:2] [--train-frac 0.1,0.3] [--sequences 30]
    harcl gen-synthetic out.csv [--classes 10] [--seed 0] ...
    harcl list strategies|samplers|presets
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import shutil
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .benchmark import GROUPS, ProtocolConfig, RunSummary, aggregate, run_benchmark, timing_summary
from .benchmark import _prepare_splits
from .data import gen_synthetic, load_feature_csv, save_feature_csv
from .losses import LossWeights
from .memory import SAMPLERS
from .network import TRAIN_PRESETS, TrainConfig
from .strategies import ABLATIONS, STRATEGIES, StrategySpec, strategy_class

OUTPUT_FILES = {
    "runs.csv": "per-task scores of every sequence",
    "summary.json": "mean and std of final and per-task F1 for each configuration",
    "forgetting.csv": "forgetting score per task",
    "curves.csv": "task-level F1 curves per class group",
    "timing.csv": "wall-clock seconds per incremental task and per full sequence",
    "sampler_grid.csv": "final all-class F1 over sampler and holdout size",
    "train_size.csv": "final all-class F1 over training-set fraction",
}


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("harcl").joinpath("config_schema.json").read_text())


def validate_config(config: dict, base_dir: Path | None = None) -> None:
    errors = sorted(jsonschema.Draft202012Validator(load_schema()).iter_errors(config), key=str)
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    ds = config["dataset"]
    if "path" in ds:
        p = Path(ds["path"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.is_file():
            raise ConfigError(f"dataset file not found: {p}")
    for entry in config["strategies"]:
        sid = entry if isinstance(entry, str) else entry["id"]
        try:
            strategy_class(sid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(entry, dict) and entry.get("preset", "default") not in TRAIN_PRESETS:
            raise ConfigError(f"unknown preset {entry['preset']!r}; known: {', '.join(TRAIN_PRESETS)}")
        try:
            _build_spec(entry, config, "default", 1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"strategy {sid!r}: {exc}") from None
    fracs = config.get("train_fracs", [0.7])
    if max(fracs) > 0.7 + 1e-12:
        raise ConfigError("train_fracs are fractions of the whole dataset and cannot exceed the 0.7 train split")


def parse_holdout(text: str) -> list[int]:
    """``"6"``, ``"2,6,10"`` or the range form ``"2..15:2"`` (inclusive end, optional step)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            rng, _, step = part.partition(":")
            lo, hi = rng.split("..")
            out.extend(range(int(lo), int(hi) + 1, int(step or 1)))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty holdout list {text!r}")
    return out


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


@dataclass(frozen=True)
class Combination:
    strategy: str
    sampler: str
    holdout: int
    train_frac: float
    seed: int

    def key(self) -> dict:
        return asdict(self)


def _build_spec(entry, config: dict, sampler: str, holdout: int) -> StrategySpec:
    entry = {"id": entry} if isinstance(entry, str) else entry
    train = {**TRAIN_PRESETS[entry.get("preset", "default")], **config.get("train", {}), **entry.get("train", {})}
    weights = {**config.get("weights", {}), **entry.get("weights", {})}
    return StrategySpec(
        id=entry["id"],
        weights=LossWeights(**weights),
        train=TrainConfig(**train),
        sampler=None if sampler in ("default", "none") else sampler,
        holdout=holdout,
    )


def _load_dataset(config: dict, base_dir: Path):
    ds = config["dataset"]
    if "synthetic" in ds:
        return gen_synthetic(**ds["synthetic"])
    p = Path(ds["path"])
    if not p.is_absolute():
        p = base_dir / p
    return load_feature_csv(p, label_column=ds.get("label_column", "label"),
                            user_column=ds.get("user_column", "user"))


def expand_grid(config: dict):
    """Yield ``(Combination, entry)``.

    A strategy entry may override the global ``samplers``/``holdouts`` lists;
    strategies without memory ignore both.
    """
    for entry in config["strategies"]:
        sid = entry if isinstance(entry, str) else entry["id"]
        over = {} if isinstance(entry, str) else entry
        samplers = over.get("samplers", config.get("samplers", ["default"]))
        holdouts = over.get("holdouts", config.get("holdouts", [6]))
        cls = strategy_class(sid)
        if cls.rehearsal:
            samplers = [cls.default_sampler if s == "default" else s for s in samplers]
        for sampler, holdout, frac, seed in itertools.product(
                samplers if cls.rehearsal else ["none"], holdouts if cls.rehearsal else [0],
                config.get("train_fracs", [0.7]), config.get("seeds", [0])):
            yield Combination(sid, sampler, holdout, float(frac), int(seed)), entry


def run_experiment(config: dict, base_dir: Path | None = None, log=None, checkpoint_root: Path | None = None) -> dict:
    """Run every configuration of the grid; returns ``{Combination: list[RunSummary]}`` keyed in grid order.

    With ``checkpoint_root`` every network is saved after every task under a
    per-configuration subdirectory.
    """
    base_dir = base_dir or Path.cwd()
    validate_config(config, base_dir)
    dataset = _load_dataset(config, base_dir)
    results: dict[Combination, list[RunSummary]] = {}
    split_cache = {}
    for combo, entry in expand_grid(config):
        protocol = ProtocolConfig(
            classes_per_task=config.get("classes_per_task", 2),
            num_sequences=config.get("sequences", 30),
            split=config.get("split", "stratified"),
            train_size=None if combo.train_frac >= 0.7 - 1e-12 else combo.train_frac,
            hidden=config.get("hidden"),
            standardize=config.get("standardize", False),
            seed=combo.seed,
            jobs=config.get("jobs", 1),
            checkpoint_dir=None if checkpoint_root is None else str(checkpoint_root / _combo_dirname(combo)),
        )
        skey = (combo.seed, combo.train_frac)
        if skey not in split_cache:
            split_cache[skey] = _prepare_splits(dataset, protocol)
        spec = _build_spec(entry, config, combo.sampler, max(combo.holdout, 1))
        if log:
            log(f"running {combo.strategy} sampler={combo.sampler} s={combo.holdout} "
                f"train={combo.train_frac} seed={combo.seed}")
        results[combo] = run_benchmark(spec, dataset, protocol, splits=split_cache[skey])
    return results


def _combo_dirname(c: Combination) -> str:
    return f"{c.strategy}_{c.sampler}_s{c.holdout}_f{c.train_frac:g}_seed{c.seed}"


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_outputs(results: dict, out_dir: Path, config: dict) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = [f.name for f in fields(Combination)]
    score_cols = [f"{g}_{m}" for g in GROUPS for m in ("micro", "macro")]

    with open(out_dir / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["sequence", "task", "classes_seen"] + score_cols + ["forgetting", "seconds"])
        for combo, runs in results.items():
            for s in runs:
                for r in s.records:
                    scores = [_fmt(r.scores[g][m]) if r.scores[g] else "" for g in GROUPS for m in ("micro", "macro")]
                    w.writerow([*combo.key().values(), s.sequence, r.task + 1, r.classes_seen, *scores,
                                _fmt(r.forgetting), f"{r.seconds:.6f}"])

    summary = []
    aggs = {}
    for combo, runs in results.items():
        agg = aggregate(runs)
        aggs[combo] = agg
        summary.append({**combo.key(), **agg})
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    with open(out_dir / "forgetting.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["task", "mean", "std", "n"])
        for combo, agg in aggs.items():
            for entry in agg["per_task"]:
                fs = entry["forgetting"]
                if fs is not None:
                    w.writerow([*combo.key().values(), entry["task"] + 1, _fmt(fs["mean"]), _fmt(fs["std"]), fs["n"]])

    with open(out_dir / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["task", "group", "mode", "mean", "std"])
        for combo, agg in aggs.items():
            for entry in agg["per_task"]:
                for g in GROUPS:
                    for m in ("micro", "macro"):
                        v = entry[f"{g}_{m}"]
                        if v is not None:
                            w.writerow([*combo.key().values(), entry["task"] + 1, g, m, _fmt(v["mean"]), _fmt(v["std"])])

    with open(out_dir / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["incremental_mean_seconds", "total_mean_seconds"])
        for combo, runs in results.items():
            t = timing_summary(runs)
            w.writerow([*combo.key().values(), f"{t['incremental_mean_seconds']:.6f}", f"{t['total_mean_seconds']:.6f}"])

    for name, axis in (("sampler_grid.csv", ("sampler", "holdout")), ("train_size.csv", ("train_frac",))):
        with open(out_dir / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys + ["all_micro_mean", "all_micro_std", "all_macro_mean", "all_macro_std"])
            for combo, agg in aggs.items():
                mi, ma = agg["final"]["all_micro"], agg["final"]["all_macro"]
                w.writerow([*combo.key().values(), _fmt(mi["mean"]), _fmt(mi["std"]), _fmt(ma["mean"]), _fmt(ma["std"])])

    manifest = {
        "files": [{"path": name, "role": role} for name, role in OUTPUT_FILES.items()],
        "config": config,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def apply_overrides(config: dict, args) -> dict:
    config = json.loads(json.dumps(config))
    if args.seed is not None:
        config["seeds"] = [args.seed]
    if args.jobs is not None:
        config["jobs"] = args.jobs
    if args.output_dir is not None:
        config["output_dir"] = args.output_dir
    if args.strategy is not None:
        config["strategies"] = _str_list(args.strategy)
    if args.sampler is not None:
        config["samplers"] = _str_list(args.sampler)
    if args.holdout is not None:
        config["holdouts"] = args.holdout
    if args.train_frac is not None:
        config["train_fracs"] = args.train_frac
    if args.sequences is not None:
        config["sequences"] = args.sequences
    return config


def cmd_run(args) -> int:
    try:
        path = Path(args.config)
        config = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    config = apply_overrides(config, args)
    out_dir = Path(config.get("output_dir", "results"))
    if not out_dir.is_absolute():
        out_dir = path.parent / out_dir
    existed = out_dir.exists()
    try:
        ckpt = out_dir / "checkpoints" if config.get("save_checkpoints") else None
        results = run_experiment(config, base_dir=path.parent, log=lambda m: print(m, file=sys.stderr),
                                 checkpoint_root=ckpt)
        manifest = write_outputs(results, out_dir, config)
        if ckpt is not None:
            manifest["files"].append({"path": "checkpoints/", "role": "network after every task (JSON checkpoints)"})
            (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        _remove_partial(out_dir, existed)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(OUTPUT_FILES) + 1} files to {out_dir}")
    return 0


def _remove_partial(out_dir: Path, existed: bool) -> None:
    if not existed:
        shutil.rmtree(out_dir, ignore_errors=True)
        return
    for name in [*OUTPUT_FILES, "manifest.json"]:
        (out_dir / name).unlink(missing_ok=True)
    shutil.rmtree(out_dir / "checkpoints", ignore_errors=True)


def cmd_gen_synthetic(args) -> int:
    try:
        ds = gen_synthetic(classes=args.classes, samples_per_class=args.samples_per_class, dims=args.dims,
                           separation=args.separation, imbalance=args.imbalance, seed=args.seed, users=args.users)
        save_feature_csv(ds, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(ds)} samples, {ds.num_classes} classes, {ds.dims} features to {args.out}")
    return 0


def cmd_list(args) -> int:
    if args.what == "strategies":
        for sid, cls in STRATEGIES.items():
            extra = f" sampler={cls.default_sampler}" if cls.rehearsal else ""
            print(f"{sid:10s} {'rehearsal' if cls.rehearsal else 'no-memory'} head={cls.head}{extra}")
        print("# ablations (shared replay pipeline)")
        for sid in ABLATIONS:
            print(sid)
    elif args.what == "samplers":
        for s in SAMPLERS:
            print(s)
    else:
        print("loss weights:")
        for k, v in asdict(LossWeights()).items():
            print(f"  {k} = {v}")
        print("training presets:")
        base = asdict(TrainConfig())
        for name, over in TRAIN_PRESETS.items():
            print(f"  {name}: " + ", ".join(f"{k}={v}" for k, v in {**base, **over}.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harcl", description="Task-incremental activity recognition benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--output-dir")
    r.add_argument("--strategy", help="comma-separated strategy ids")
    r.add_argument("--sampler", help="comma-separated sampler ids")
    r.add_argument("--holdout", type=parse_holdout, help="e.g. 6, 2,6,10 or 2..15:2")
    r.add_argument("--train-frac", type=_float_list, help="comma-separated fractions of the whole dataset")
    r.add_argument("--sequences", type=int)
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-synthetic", help="write a synthetic feature CSV")
    g.add_argument("out")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--samples-per-class", type=int, default=100)
    g.add_argument("--dims", type=int, default=20)
    g.add_argument("--separation", type=float, default=10.0)
    g.add_argument("--imbalance", choices=["uniform", "long-tail"], default="uniform")
    g.add_argument("--users", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synthetic)

    ls = sub.add_parser("list", help="show registered ids and defaults")
    ls.add_argument("what", choices=["strategies", "samplers", "presets"])
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
