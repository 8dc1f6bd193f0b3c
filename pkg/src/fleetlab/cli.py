"""Command-line entry point: ``fleetlab <command> ...``.

Every command is deterministic given its inputs and seed. Outputs are
accompanied by a provenance record (``<output>.run.json``, or ``config.json``
and ``run.json`` inside a training directory) holding the resolved config and
the SHA-256 of every input file. Failures print one JSON object on stderr and
exit with 1 (runtime) or 2 (usage).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .models.common import TrainConfig, UnknownConfigKey, config_from_dict
from .models.gf import GFConfig
from .models.rc import RCConfig
from .rng import derive_seed
from .scaling.fit import DESK_BUDGETS

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config

@dataclass
class FloorSection:
    kind: str = "storage"
    width: int = 8
    height: int = 8
    seed: int = 0


@dataclass
class SimulationSection:
    robots: int = 3
    duration_s: float = 120.0
    seed: int = 0


@dataclass
class DatasetSection:
    preset: str = "desk"
    test_floors: int = 1
    test_days: int = 1
    val_fraction: float = 0.05
    seed: int = 0


@dataclass
class EvalSection:
    horizon_s: int = 60
    sample: bool = False


@dataclass
class ScalingSection:
    budgets: list[float] = field(default_factory=lambda: list(DESK_BUDGETS))


@dataclass
class ModelSection:
    rc: RCConfig = field(default_factory=RCConfig)
    gf: GFConfig = field(default_factory=GFConfig)


_SECTIONS = {
    "floor": FloorSection, "simulation": SimulationSection, "dataset": DatasetSection,
    "training": TrainConfig, "eval": EvalSection, "scaling": ScalingSection,
}


@dataclass
class RunConfig:
    """All tunables of the pipeline; unknown keys anywhere are rejected."""

    floor: FloorSection = field(default_factory=FloorSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    scaling: ScalingSection = field(default_factory=ScalingSection)

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        if not isinstance(doc, dict):
            raise UnknownConfigKey("config must be a JSON object")
        extra = sorted(set(doc) - {f.name for f in dataclasses.fields(cls)})
        if extra:
            raise UnknownConfigKey(f"RunConfig: unknown keys {extra}")
        kw: dict[str, Any] = {}
        for name, section in _SECTIONS.items():
            if name in doc:
                kw[name] = config_from_dict(section, doc[name])
        if "model" in doc:
            m = doc["model"]
            extra = sorted(set(m) - {"rc", "gf"})
            if extra:
                raise UnknownConfigKey(f"model: unknown keys {extra}")
            kw["model"] = ModelSection(RCConfig.from_dict(m.get("rc", {})), GFConfig.from_dict(m.get("gf", {})))
        return cls(**kw)

    @classmethod
    def load(cls, path: str | None) -> RunConfig:
        if path is None:
            return cls()
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ provenance

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_text(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_provenance(path, command: str, config: dict, inputs: Sequence, seed: int | None, **extra) -> None:
    doc = {"command": command, "config": config, "seed": seed,
           "inputs": {str(p): file_sha256(p) for p in sorted({str(p) for p in inputs})}}
    doc.update(extra)
    Path(path).write_text(_json_text(doc), encoding="utf-8")


def _sidecar(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".run.json")


def _ordered_map(fn, items: list, jobs: int) -> list:
    """``map`` that may fan out over processes but always returns input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------ gen-floor / simulate

def cmd_gen_floor(args) -> None:
    from .floor import validate_floor
    from .sim.generate import generate_floor

    floor = generate_floor(args.kind, args.width, args.height, args.seed)
    report = validate_floor(floor)
    if not report.ok:
        raise RuntimeError(f"generated floor failed validation: {report.violations}")
    _ensure_parent(args.output)
    floor.save(args.output)
    cfg = asdict(FloorSection(args.kind, args.width, args.height, args.seed))
    write_provenance(_sidecar(args.output), "gen-floor", cfg, [], args.seed, floor_hash=floor.content_hash())


def _simulate_one(job: tuple[str, int, float, int, int, str]) -> str:
    from .floor import FloorGraph
    from .sim.simulate import simulate

    floor_path, robots, duration, seed, day, out = job
    episode = simulate(FloorGraph.load(floor_path), robots, duration, seed, day=day)
    episode.save(out)
    return episode.content_hash()


def cmd_simulate(args) -> None:
    if args.episodes < 1 or args.days < 1:
        raise UsageError("--episodes and --days must be positive")
    cfg = asdict(SimulationSection(args.robots, args.duration_s, args.seed))
    if args.episodes == 1:
        _ensure_parent(args.output)
        jobs = [(args.floor, args.robots, args.duration_s, args.seed, args.day, str(args.output))]
        sidecar = _sidecar(args.output)
    else:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(args.floor, args.robots, args.duration_s, derive_seed(args.seed, "episode", i),
                 args.day + i % args.days, str(out_dir / f"episode-{i:05d}.jsonl")) for i in range(args.episodes)]
        sidecar = out_dir / "simulate.run.json"
    hashes = _ordered_map(_simulate_one, jobs, args.jobs)
    cfg.update(episodes=args.episodes, days=args.days, day=args.day)
    outputs = {Path(j[5]).name: {"seed": j[3], "day": j[4], "sha256": h} for j, h in zip(jobs, hashes)}
    write_provenance(sidecar, "simulate", cfg, [args.floor], args.seed, outputs=outputs)


# ------------------------------------------------------------------ build-dataset

def _scan_floors(paths) -> dict[str, Path]:
    from .floor import FloorGraph

    floors = {}
    for p in paths:
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            continue
        if isinstance(doc, dict) and "vertices" in doc and "edges" in doc:
            floors[FloorGraph.from_dict(doc).content_hash()] = p
    return floors


def cmd_build_dataset(args) -> None:
    from .dataset.manifest import ManifestEntry, split_manifest, write_shards
    from .dataset.rc import DESK_PRESET, PAPER_PRESET, build_rc_samples
    from .floor import FloorGraph
    from .sim.episode import Episode

    src = Path(args.episodes_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"episodes directory not found: {src}")
    out = Path(args.output)
    _ensure_parent(out)
    base = out.parent.resolve()
    floor_dirs = [src] + [Path(d) for d in args.floors_dir]
    floors = _scan_floors(sorted(p for d in floor_dirs for p in d.glob("*.json") if not p.name.endswith(".run.json")))
    episode_paths = sorted(src.rglob("*.jsonl"))
    episode_paths = [p for p in episode_paths if not p.name.startswith("shard-")]
    entries, inputs, used_floors = [], list(episode_paths), {}
    for p in episode_paths:
        with open(p, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
        fh_ = header["floor_hash"]
        if fh_ not in floors:
            raise FileNotFoundError(f"{p}: no floor file with hash {fh_[:12]}")
        used_floors[fh_] = os.path.relpath(floors[fh_].resolve(), base)
        entries.append(ManifestEntry(os.path.relpath(p.resolve(), base), fh_, int(header.get("day", 0))))
    if not entries:
        raise FileNotFoundError(f"no episode files under {src}")
    ds = DatasetSection(args.preset, args.test_floors, args.test_days, args.val_fraction, args.seed)
    manifest = split_manifest(entries, args.test_floors, args.test_days, args.seed, args.val_fraction)
    manifest.floors = used_floors
    preset = PAPER_PRESET if args.preset == "paper" else DESK_PRESET
    manifest.meta.update(preset=args.preset, rc=dict(preset), val_fraction=args.val_fraction)
    manifest.save(out)
    inputs += [floors[h] for h in used_floors]
    shard_files = []
    if args.shards:
        floor_cache = {h: FloorGraph.load(floors[h]) for h in used_floors}

        def records(split):
            for e in manifest.split(split):
                ep = Episode.load(base / e.episode)
                for s in build_rc_samples(ep, floor_cache[e.floor], **preset):
                    yield s.to_dict()
        for split in ("train", "val", "test"):
            shard_files += [str(p.relative_to(base)) for p in
                            write_shards(records(split), Path(args.shards) / split, args.shard_bytes)]
    write_provenance(_sidecar(out), "build-dataset", asdict(ds), inputs, args.seed,
                     counts={s: len(manifest.split(s)) for s in ("train", "val", "test")}, shards=shard_files)


# ------------------------------------------------------------------ train

def _load_split(manifest, split: str):
    from .floor import FloorGraph
    from .sim.episode import Episode

    floors: dict[str, Any] = {}
    for e in manifest.split(split):
        if e.floor not in floors:
            floors[e.floor] = FloorGraph.load(manifest.resolve(manifest.floors[e.floor]))
        yield Episode.load(manifest.resolve(e.episode)), floors[e.floor], manifest.resolve(e.episode)


def _rc_table(manifest, split, cfg: RCConfig):
    from .dataset.rc import RCTable, build_rc_table

    tables, paths = [], []
    for ep, floor, p in _load_split(manifest, split):
        tables.append(build_rc_table(ep, floor, cfg.K, cfg.K_r, cfg.K_p, cfg.K_x))
        paths.append(p)
    return (RCTable.concat(tables) if tables else None), paths


def _gf_table(manifest, split, cfg: GFConfig):
    from .models.gf import GFTable

    table, paths = GFTable(cfg), []
    for ep, floor, p in _load_split(manifest, split):
        table.add(ep, floor)
        paths.append(p)
    return table, paths


def cmd_train(args) -> None:
    from .dataset.manifest import DatasetManifest
    from .models.common import write_ledger
    from .nn import load_checkpoint, save_checkpoint

    run = RunConfig.load(args.config)
    if args.steps is not None:
        run.training.steps = args.steps
    manifest = DatasetManifest.load(args.manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path, ledger_path = out / "checkpoint.flck", out / "ledger.csv"
    store = None
    if args.resume:
        store = load_checkpoint(ckpt_path)
        if store.meta.get("model") != args.model:
            raise ValueError("checkpoint was trained for a different model family")
    if args.model == "rc":
        from .models.rc import rc_accuracy, train_rc

        mcfg = run.model.rc
        table, inputs = _rc_table(manifest, "train", mcfg)
        if table is None or len(table) == 0:
            raise ValueError("training split has no samples")
        store, rows = train_rc(table, mcfg, run.training, args.seed, store=store, until=args.until)
        val, val_inputs = _rc_table(manifest, "val", mcfg)
        metric = ("val_next_action_accuracy", rc_accuracy(store, mcfg, val) if val is not None and len(val) else None)
    else:
        from .models.gf import gf_move_accuracy, train_gf

        mcfg = run.model.gf
        table, inputs = _gf_table(manifest, "train", mcfg)
        store, rows = train_gf(table, mcfg, run.training, args.seed, store=store, until=args.until)
        val, val_inputs = _gf_table(manifest, "val", mcfg)
        metric = ("val_move_accuracy", gf_move_accuracy(store, mcfg, val) if len(val) else None)
    save_checkpoint(store, ckpt_path)
    write_ledger(rows, ledger_path, append=args.resume)
    (out / "config.json").write_text(_json_text(run.to_dict()), encoding="utf-8")
    params = store.n_params()
    write_provenance(out / "run.json", "train", run.to_dict(), [args.manifest] + inputs + val_inputs, args.seed,
                     model=args.model, params=params, steps=store.opt_step, **{metric[0]: metric[1]})


# ------------------------------------------------------------------ rollout

def _load_model(checkpoint):
    from .nn import load_checkpoint

    store = load_checkpoint(checkpoint)
    family = store.meta.get("model")
    if family not in ("rc", "gf") or "config" not in store.meta:
        raise ValueError(f"{checkpoint}: checkpoint does not record its model configuration")
    cfg = (RCConfig if family == "rc" else GFConfig).from_dict(store.meta["config"])
    return family, (store, cfg)


def _rollout_one(job) -> str:
    from .evaluation.rollout import rollout
    from .floor import FloorGraph
    from .sim.episode import Episode

    name, checkpoint, episode_path, floor_path, t0, horizon, seed, sample, out = job
    model = None
    if checkpoint is not None:
        family, model = _load_model(checkpoint)
        if family != name:
            raise ValueError(f"checkpoint holds a {family} model, not {name}")
    truth = Episode.load(episode_path)
    start = truth.t_end - horizon if t0 is None else t0
    if start < truth.t_start:
        raise ValueError(f"{episode_path}: episode shorter than the {horizon} s horizon")
    pred = rollout(name, FloorGraph.load(floor_path), truth, start, horizon, model=model, seed=seed, sample=sample)
    pred.save(out)
    return pred.content_hash()


def cmd_rollout(args) -> None:
    if args.model in ("rc", "gf") and args.checkpoint is None:
        raise UsageError(f"--checkpoint is required for --model {args.model}")
    if args.horizon_s < 0:
        raise UsageError("--horizon-s must be non-negative")
    if len(args.episode) == 1:
        outs = [Path(args.output)]
        _ensure_parent(args.output)
        sidecar = _sidecar(args.output)
    else:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        outs = [out_dir / f"pred-{i:05d}.jsonl" for i in range(len(args.episode))]
        sidecar = out_dir / "rollout.run.json"
    jobs = [(args.model, args.checkpoint, ep, args.floor, args.t0, args.horizon_s, args.seed, args.sample, str(o))
            for ep, o in zip(args.episode, outs)]
    hashes = _ordered_map(_rollout_one, jobs, args.jobs)
    inputs = list(args.episode) + [args.floor] + ([args.checkpoint] if args.checkpoint else [])
    cfg = {"model": args.model, "horizon_s": args.horizon_s, "t0": args.t0, "sample": args.sample}
    write_provenance(sidecar, "rollout", cfg, inputs, args.seed,
                     outputs={o.name: h for o, h in zip(outs, hashes)})


# ------------------------------------------------------------------ eval

def cmd_eval(args) -> None:
    from .evaluation.report import evaluate, write_report
    from .floor import FloorGraph
    from .sim.episode import Episode

    if len(args.pred) != len(args.truth):
        raise UsageError("--pred and --truth need the same number of files")
    floor = FloorGraph.load(args.floor)
    groups: dict[str, list] = {}
    for p, t in zip(args.pred, args.truth):
        pred, truth = Episode.load(p), Episode.load(t)
        if pred.floor_hash != floor.content_hash() or truth.floor_hash != floor.content_hash():
            raise ValueError(f"{p} / {t}: episodes were not recorded on the given floor")
        name = args.name or pred.meta.get("predictor", "pred")
        groups.setdefault(name, []).append((pred, truth.window(pred.t_start, pred.t_end), floor))
    reports = [evaluate(name, pairs) for name, pairs in sorted(groups.items())]
    _ensure_parent(args.output)
    write_report(reports, args.output)
    write_provenance(_sidecar(args.output), "eval", {"name": args.name}, list(args.pred) + list(args.truth)
                     + [args.floor], None)


# ------------------------------------------------------------------ scaling

def cmd_scaling_fit(args) -> None:
    from .scaling.fit import fit_scaling, isoflop_points, load_run, write_isoflop_csv, write_long_csv, \
        write_powerlaw_csv

    outs = [s for s in args.output.split(",") if s]
    if len(outs) != 2:
        raise UsageError("-o expects two comma-separated paths: isoflop.csv,powerlaw.csv")
    budgets = args.budgets or list(DESK_BUDGETS)
    runs = [load_run(p) for p in args.ledgers]
    points = isoflop_points(runs, budgets)
    fits, laws = fit_scaling(points)
    for o in outs:
        _ensure_parent(o)
    write_isoflop_csv(fits, outs[0])
    write_powerlaw_csv(laws, outs[1])
    if args.long:
        write_long_csv(points, args.long)
    inputs = []
    for p in args.ledgers:
        d = Path(p) if Path(p).is_dir() else Path(p).parent
        inputs += [d / "ledger.csv", d / "run.json"]
    write_provenance(_sidecar(outs[0]), "scaling fit", asdict(ScalingSection(list(budgets))), inputs, None,
                     n_fits=len(fits), n_laws=len(laws))


# ------------------------------------------------------------------ parser

def _ensure_parent(path) -> None:
    Path(path).resolve().parent.mkdir(parents=True, exist_ok=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fleetlab", description="Warehouse fleet simulation, forecasting models and evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-floor", help="generate a seeded grid floor")
    g.add_argument("--kind", choices=("storage", "sortation"), default="storage")
    g.add_argument("--width", type=int, default=8)
    g.add_argument("--height", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_floor)

    s = sub.add_parser("simulate", help="run the scripted fleet on a floor")
    s.add_argument("--floor", required=True)
    s.add_argument("--robots", type=int, default=3)
    s.add_argument("--duration-s", type=float, default=120.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--day", type=int, default=0, help="simulated day index of the first episode")
    s.add_argument("--episodes", type=int, default=1, help="with more than one, -o names a directory")
    s.add_argument("--days", type=int, default=1, help="spread episodes over this many consecutive days")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("build-dataset", help="split episodes into a manifest")
    b.add_argument("--episodes-dir", required=True)
    b.add_argument("--floors-dir", action="append", default=[], help="extra directory holding floor files")
    b.add_argument("--preset", choices=("paper", "desk"), default="desk")
    b.add_argument("--test-floors", type=int, default=1)
    b.add_argument("--test-days", type=int, default=1)
    b.add_argument("--val-fraction", type=float, default=0.05)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--shards", help="also write RC sample shards under this directory")
    b.add_argument("--shard-bytes", type=int, default=64 * 1024 * 1024)
    b.add_argument("-o", "--output", required=True)
    b.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="train an RC or GF model")
    t.add_argument("--model", choices=("rc", "gf"), required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="RunConfig JSON; defaults apply to missing keys")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, help="override training.steps")
    t.add_argument("--until", type=int, help="stop after this step; the schedule still spans training.steps")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out-dir")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="closed-loop 60 s forecast from a reference episode")
    r.add_argument("--model", choices=("rc", "gf", "random", "replay"), required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--episode", nargs="+", required=True)
    r.add_argument("--floor", required=True)
    r.add_argument("--t0", type=int, help="rollout start (default: horizon before the episode end)")
    r.add_argument("--horizon-s", type=int, default=60)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sample", action="store_true", help="sample actions instead of greedy decoding")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="DTW and congestion-delay report")
    e.add_argument("--pred", nargs="+", required=True)
    e.add_argument("--truth", nargs="+", required=True)
    e.add_argument("--floor", required=True)
    e.add_argument("--name", help="model column (default: predictor recorded in the prediction)")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_eval)

    sc = sub.add_parser("scaling", help="isoFLOP and power-law fits")
    scs = sc.add_subparsers(dest="scaling_command", required=True, parser_class=_Parser)
    f = scs.add_parser("fit", help="fit isoFLOP parabolas and power laws to training ledgers")
    f.add_argument("--ledgers", nargs="+", required=True, help="training output directories")
    f.add_argument("--budgets", type=float, nargs="+")
    f.add_argument("--long", help="also write long-format points CSV")
    f.add_argument("-o", "--output", required=True, help="isoflop.csv,powerlaw.csv")
    f.set_defaults(func=cmd_scaling_fit)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    try:
        args.func(args)
    except (UsageError, UnknownConfigKey) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except Exception as exc:  # every runtime failure becomes a JSON record
        return _fail("runtime", exc, EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
