"""
Command Handlers
Every subcommand of the molprop CLI, each recorded in a run manifest
"""

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import argparse
import json
import logging
import sys
import uuid

import numpy as np

import config as app_config
from autodiff.gradcheck import grad_check
from data.cache import load_cache_for, write_cache
from data.featurizer import SPATIAL_MODES, FeaturizedGraph, MoleculeFeaturizer, RbfConfig
from data.loader import load_dataset, read_schema, write_dataset
from data.synthetic import DEFAULT_SCHEMA, dataset_stats, synthesize_molecules
from inference.ensemble import (
    compare_predictions,
    read_spec,
    run_inference,
    submission_spec,
    write_predictions,
    write_spec,
)
from models.base import RegressionModel
from models.database import RunRegistry
from models.factory import build_model, load_model
from training.folds import ALL_FOLDS, SUBMISSION_NORMALIZER, kfold_split, submission_plan
from training.optim import mae_loss
from training.profiles import MODEL_KINDS, PROFILE_NAMES, get_profile
from training.trainer import evaluate_mae, fit
from utils.errors import ConfigError, DataFormatError, MolPropError
from utils.helpers import atomic_write_json, file_sha256, resolve_workers, utc_timestamp

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


# --------------------------------------------------
# Run manifest
# --------------------------------------------------
@dataclass
class RunManifest:
    """
    What a command did: argv, resolved config, seed, files and their hashes

    Written atomically when the command starts and again when it ends.
    """

    run_id: str
    command: str
    argv: List[str]
    seed: Optional[int] = None
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    status: str = "started"
    error: Optional[str] = None
    started_at: str = ""
    finished_at: Optional[str] = None
    version: str = app_config.APP_VERSION

    def path(self, directory: Path) -> Path:
        return Path(directory) / f"{self.run_id}.json"

    def hash_files(self) -> None:
        files = {f"input:{k}": v for k, v in self.inputs.items()}
        files.update({f"output:{k}": v for k, v in self.outputs.items()})
        self.artifacts = {name: file_sha256(p) for name, p in files.items() if Path(p).is_file()}

    def write(self, directory: Path) -> Path:
        return atomic_write_json(self.path(directory), asdict(self))

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            record = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**record)
        except FileNotFoundError:
            raise DataFormatError(f"manifest not found: {path}") from None
        except (json.JSONDecodeError, TypeError) as e:
            raise DataFormatError(f"invalid manifest {path}: {e}") from e


def _new_run_id(command: str) -> str:
    stamp = utc_timestamp().replace(":", "").replace("-", "").replace("+0000", "Z")
    return f"{command}-{stamp}-{uuid.uuid4().hex[:8]}"


# --------------------------------------------------
# Shared helpers
# --------------------------------------------------
def _workers(args) -> int:
    return resolve_workers(getattr(args, "workers", None), app_config.DEFAULT_WORKERS)


def _featurize_for(model: RegressionModel, data: Path, cache: Optional[str], workers: int) -> List[FeaturizedGraph]:
    if cache:
        return load_cache_for(cache, model.spatial_mode, model.rbf)
    return MoleculeFeaturizer(model.rbf, model.spatial_mode, workers).featurize_all(load_dataset(data))


def _run_name(model: str, fold: str, seed: int) -> str:
    return f"{model}-fold{fold}-seed{seed}"


# --------------------------------------------------
# Commands
# --------------------------------------------------
def _featurize_layout(args) -> Tuple[str, RbfConfig]:
    """Spatial mode and RBF layout of the chosen model profile, with any explicit overrides"""
    model_cfg, _ = get_profile(args.model, args.profile)
    model = build_model(args.model, model_cfg)
    mode = args.spatial_mode or model.spatial_mode
    rbf = model.rbf
    geometry = {"n_kernels": args.rbf_kernels, "center_min": args.rbf_min, "center_max": args.rbf_max}
    geometry = {name: value for name, value in geometry.items() if value is not None}
    if geometry or args.rbf_gamma is not None:
        # A changed center grid re-derives gamma unless one is given
        gamma = args.rbf_gamma if args.rbf_gamma is not None else (None if geometry else rbf.gamma)
        rbf = RbfConfig(**{**rbf.to_dict(), **geometry, "gamma": gamma})
    return mode, rbf


def cmd_featurize(args, manifest: RunManifest) -> int:
    """Featurizes a dataset into a single cache file laid out for one model profile"""
    mode, rbf = _featurize_layout(args)
    workers = _workers(args)
    manifest.config = {
        "model": args.model,
        "profile": args.profile,
        "spatial_mode": mode,
        "rbf": rbf.to_dict(),
        "workers": workers,
    }
    manifest.inputs = {"data": str(args.data)}
    manifest.outputs = {"cache": str(args.out)}

    records = MoleculeFeaturizer(rbf, mode, workers).featurize_all(load_dataset(args.data))
    write_cache(args.out, records, mode, rbf)
    print(f"featurized {len(records)} molecules ({mode}, {rbf.n_kernels} kernels) -> {args.out}")
    return 0


def cmd_train(args, manifest: RunManifest) -> int:
    """Trains one fold run (or an 'All' run) and registers it"""
    if args.profile == "paper" and not args.i_have_the_compute:
        raise ConfigError(
            "the paper profile trains for days on large hardware; "
            "pass --i-have-the-compute to start it anyway"
        )
    model_cfg, train_cfg = get_profile(args.model, args.profile)
    if args.spatial_mode is not None:
        if args.model != "graphormer":
            raise ConfigError("--spatial-mode applies to graphormer only")
        model_cfg = replace(model_cfg, spatial_mode=args.spatial_mode)
    if args.max_steps is not None and args.model == "graphormer":
        # Warm-up keeps its share of the shortened schedule
        warmup = train_cfg.warmup_steps * args.max_steps // train_cfg.max_steps
        train_cfg = replace(train_cfg, max_steps=args.max_steps, warmup_steps=warmup)
    elif args.max_steps is not None:
        train_cfg = replace(train_cfg, max_epochs=args.max_steps)

    schema = read_schema(args.data)
    model = build_model(args.model, model_cfg).with_schema(schema)
    fold = ALL_FOLDS if str(args.fold) == ALL_FOLDS else str(int(args.fold))
    run_name = args.name or _run_name(args.model, fold, args.seed)
    out_dir = Path(args.out)

    manifest.seed = args.seed
    manifest.config = {
        "model": args.model,
        "profile": args.profile,
        "model_config": model.cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "fold": fold,
        "folds": args.folds,
        "split_seed": args.split_seed,
        "schema": schema.to_dict(),
    }
    manifest.inputs = {"data": str(args.data)}
    if args.cache:
        manifest.inputs["cache"] = str(args.cache)
    manifest.outputs = {
        "checkpoint": str(out_dir / f"{run_name}.ckpt"),
        "metrics": str(out_dir / f"{run_name}.metrics.jsonl"),
    }

    fgs = _featurize_for(model, args.data, args.cache, _workers(args))
    plan = kfold_split([fg.mol_id for fg in fgs], args.folds, args.split_seed)
    run = plan.run(fold, args.seed)

    registry = RunRegistry(args.db)
    registry.start_run(
        manifest.run_id,
        "train",
        model=args.model,
        profile=args.profile,
        fold=fold,
        seed=args.seed,
        config_snapshot=manifest.config,
        manifest_path=str(manifest.path(Path(args.manifest_dir))),
        started_at=manifest.started_at,
    )
    try:
        result = fit(model, fgs, train_cfg, run, out_dir, plan=plan, run_name=run_name, registry=registry, run_id=manifest.run_id)
    except MolPropError:
        registry.finish_run(manifest.run_id, "failed", utc_timestamp())
        raise
    registry.finish_run(
        manifest.run_id,
        "ok",
        utc_timestamp(),
        checkpoint_sha256=file_sha256(result.checkpoint),
        best_val_mae=result.best_val_mae,
        final_train_mae=result.final_train_mae,
    )
    val_text = f"{result.best_val_mae:.6f}" if result.best_val_mae is not None else "-"
    print(
        f"{run_name}: best step {result.best_step} | train MAE {result.final_train_mae:.6f} "
        f"| val MAE {val_text} -> {result.checkpoint}"
    )
    return 0


def cmd_eval(args, manifest: RunManifest) -> int:
    """Eval-mode MAE of a checkpoint, optionally writing its predictions"""
    model, params = load_model(args.checkpoint)
    manifest.config = {"model": model.kind, "model_config": model.cfg.to_dict(), "batch_size": args.batch_size}
    manifest.inputs = {"checkpoint": str(args.checkpoint), "data": str(args.data)}
    fgs = _featurize_for(model, args.data, args.cache, _workers(args))
    mae = evaluate_mae(model, params, fgs, args.batch_size)
    if args.predictions:
        manifest.outputs = {"predictions": str(args.predictions)}
        write_predictions(args.predictions, [fg.mol_id for fg in fgs], model.predict(params, fgs, args.batch_size))
    manifest.config["mae"] = mae
    print(f"MAE {mae:.6f} over {len(fgs)} molecules")
    return 0


def cmd_gradcheck(args, manifest: RunManifest) -> int:
    """
    Finite-difference check of a model's full training objective

    Exits with the numerical-failure status when the maximum relative error
    exceeds the tolerance.
    """
    model_cfg, _ = get_profile(args.model, args.profile)
    model = build_model(args.model, model_cfg).with_schema(DEFAULT_SCHEMA)
    manifest.seed = args.seed
    manifest.config = {
        "model": args.model,
        "profile": args.profile,
        "model_config": model.cfg.to_dict(),
        "molecules": args.molecules,
        "samples": args.samples,
        "eps": args.eps,
        "tolerance": args.tolerance,
    }
    fgs = model.featurizer().featurize_all(synthesize_molecules(args.molecules, args.seed, DEFAULT_SCHEMA))
    batch = model.collate(fgs)
    params = model.init_params(args.seed).as_dict()
    # Zero-initialized heads would make every upstream gradient vanish
    rng = np.random.default_rng(args.seed)
    for name in params:
        if name.startswith("head."):
            params[name] = rng.normal(0.0, 0.5, params[name].shape)

    def objective(tape, leaves):
        return mae_loss(model.forward(tape, leaves, batch, train=False), batch.targets)

    per_param: Dict[str, float] = {}
    worst = grad_check(objective, params, eps=args.eps, n_samples=args.samples, seed=args.seed, per_param=per_param)
    manifest.config["max_rel_error"] = worst
    manifest.config["per_param"] = per_param
    print(f"max relative error {worst:.3e} ({len(per_param)} tensors)")
    if worst > args.tolerance:
        logger.error(f"gradient check failed: {worst:.3e} > {args.tolerance:.1e}")
        return 3
    return 0


def cmd_ensemble(args, manifest: RunManifest) -> int:
    """Weighted ensemble predictions over a dataset"""
    spec = read_spec(args.spec, root=args.root)
    manifest.config = {
        "normalizer": spec.normalizer,
        "entries": [asdict(entry) for entry in spec.entries],
        "batch_size": args.batch_size,
    }
    manifest.inputs = {"spec": str(args.spec), "data": str(args.data)}
    manifest.inputs.update({f"checkpoint{i}": entry.checkpoint for i, entry in enumerate(spec.entries)})
    manifest.outputs = {"predictions": str(args.out)}
    ids, predictions, _ = run_inference(spec, list(load_dataset(args.data)), _workers(args), args.batch_size)
    write_predictions(args.out, ids, predictions)
    print(f"ensembled {len(spec.entries)} models over {len(ids)} molecules -> {args.out}")
    return 0


def cmd_compare(args, manifest: RunManifest) -> int:
    """MAE between two prediction files; numerical-failure status above the tolerance"""
    manifest.inputs = {"a": str(args.a), "b": str(args.b)}
    manifest.config = {"tolerance": args.tol}
    result = compare_predictions(args.a, args.b, args.tol)
    manifest.config.update({"n": result.n, "mae": result.mae, "max_abs": result.max_abs})
    verdict = "within" if result.within_tolerance else "OUTSIDE"
    print(f"MAE {result.mae:.3e} (max {result.max_abs:.3e}) over {result.n} molecules: {verdict} tolerance {args.tol:g}")
    return 0 if result.within_tolerance else 3


def cmd_plan(args, manifest: RunManifest) -> int:
    """Writes the final-submission ensemble spec and, given data, the fold assignment"""
    spec = submission_spec(args.checkpoint_dir)
    manifest.config = {"checkpoint_dir": args.checkpoint_dir, "normalizer": SUBMISSION_NORMALIZER}
    manifest.outputs = {"spec": str(args.spec)}
    write_spec(
        args.spec,
        spec,
        header=("final submission: 10 Graphormer + 8 ExpC* runs", "weight<TAB>checkpoint, relative to this file"),
    )
    for run in submission_plan():
        print(f"{run.name:28s} weight {run.weight:.2f}")
    if args.data:
        ids = [g.mol_id for g in load_dataset(args.data)]
        plan = kfold_split(ids, args.folds, args.split_seed)
        manifest.seed = args.split_seed
        manifest.inputs = {"data": str(args.data)}
        manifest.outputs["folds"] = str(args.folds_out)
        manifest.config.update({"folds": args.folds, "split_seed": args.split_seed})
        atomic_write_json(args.folds_out, plan.to_dict())
        print(f"fold sizes {plan.fold_sizes()} -> {args.folds_out}")
    return 0


def cmd_dataset_synth(args, manifest: RunManifest) -> int:
    """Writes a deterministic synthetic dataset"""
    manifest.seed = args.seed
    manifest.config = {"n": args.n, "min_atoms": args.min_atoms, "max_atoms": args.max_atoms, "schema": DEFAULT_SCHEMA.to_dict()}
    manifest.outputs = {"data": str(args.out)}
    graphs = synthesize_molecules(args.n, args.seed, DEFAULT_SCHEMA, args.min_atoms, args.max_atoms)
    write_dataset(args.out, DEFAULT_SCHEMA, graphs)
    print(f"wrote {len(graphs)} molecules -> {args.out}")
    return 0


def cmd_dataset_stats(args, manifest: RunManifest) -> int:
    manifest.inputs = {"data": str(args.data)}
    print(dataset_stats(load_dataset(args.data)).to_string())
    return 0


def cmd_runs(args, manifest: RunManifest) -> int:
    """Prints the run registry as a results table plus per-model CV summary"""
    registry = RunRegistry(args.db)
    frame = registry.summary_frame()
    if frame.empty:
        print("no runs recorded")
        return 0
    print(frame.to_string(index=False))
    summary = registry.cv_summary()
    if not summary.empty:
        print()
        print(summary.to_string(index=False))
    return 0


def cmd_replay(args, manifest: Optional[RunManifest] = None) -> int:
    """
    Re-executes the argv stored in a run manifest

    Seed, workers and registry URL were frozen into that argv when the run
    started, so the current environment does not change the replayed run.
    """
    recorded = RunManifest.read(args.manifest)
    if recorded.argv and recorded.argv[0] == "replay":
        raise ConfigError("refusing to replay a replay")
    logger.info(f"Replaying {recorded.run_id}: {' '.join(recorded.argv)}")
    return run(recorded.argv)


# --------------------------------------------------
# Parser
# --------------------------------------------------
class CommandParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fold_arg(text: str) -> str:
    if text == ALL_FOLDS:
        return text
    try:
        return str(int(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"fold must be an integer or {ALL_FOLDS!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = CommandParser(prog=app_config.APP_NAME, description=app_config.APP_DESCRIPTION)
    parser.add_argument("--manifest-dir", default=None, help="Run manifest directory (default: MANIFEST_DIR)")
    parser.add_argument("--version", action="version", version=f"{app_config.APP_NAME} {app_config.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="Featurize a dataset into a cache file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="graphormer", help="Model the cache is laid out for")
    p.add_argument("--profile", choices=PROFILE_NAMES, default="mini")
    p.add_argument("--spatial-mode", choices=SPATIAL_MODES, default=None, help="Default: the model's")
    p.add_argument("--rbf-kernels", type=int, default=None, help="Default: the profile's")
    p.add_argument("--rbf-min", type=float, default=None)
    p.add_argument("--rbf-max", type=float, default=None)
    p.add_argument("--rbf-gamma", type=float, default=None, help="Default: the profile's, or derived from a changed grid")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_featurize)

    p = sub.add_parser("train", help="Train one fold run")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--profile", choices=PROFILE_NAMES, default="mini")
    p.add_argument("--fold", type=_fold_arg, default="0", help=f"Validation fold, or {ALL_FOLDS}")
    p.add_argument("--seed", type=int, default=app_config.DEFAULT_SEED)
    p.add_argument("--folds", type=int, default=8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--data", required=True)
    p.add_argument("--cache", default=None, help="Featurized cache built for this model")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None, help="Artifact file stem (default: <model>-fold<K>-seed<S>)")
    p.add_argument("--spatial-mode", choices=SPATIAL_MODES, default=None)
    p.add_argument("--max-steps", type=int, default=None, help="Override steps (graphormer) or epochs (expc)")
    p.add_argument("--db", default=None, help="Run registry URL (default: DATABASE_URL)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--i-have-the-compute", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="MAE of a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient check of a model")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--profile", choices=PROFILE_NAMES, default="mini")
    p.add_argument("--seed", type=int, default=app_config.DEFAULT_SEED)
    p.add_argument("--molecules", type=int, default=3)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("ensemble", help="Weighted ensemble predictions")
    p.add_argument("--spec", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--root", default=None, help="Base of relative checkpoint paths (default: spec directory)")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_ensemble)

    p = sub.add_parser("compare", help="MAE between two prediction files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("plan", help="Write the submission ensemble spec (and a fold assignment)")
    p.add_argument("--spec", required=True)
    p.add_argument("--checkpoint-dir", default="checkpoints")
    p.add_argument("--data", default=None)
    p.add_argument("--folds", type=int, default=8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--folds-out", default="folds.json")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("dataset", help="Dataset utilities")
    dataset = p.add_subparsers(dest="dataset_command", required=True)
    q = dataset.add_parser("synth", help="Write a synthetic dataset")
    q.add_argument("--n", type=int, default=64)
    q.add_argument("--seed", type=int, default=app_config.DEFAULT_SEED)
    q.add_argument("--min-atoms", type=int, default=3)
    q.add_argument("--max-atoms", type=int, default=10)
    q.add_argument("--out", required=True)
    q.set_defaults(handler=cmd_dataset_synth)
    q = dataset.add_parser("stats", help="Atom / bond / target statistics")
    q.add_argument("--data", required=True)
    q.set_defaults(handler=cmd_dataset_stats)

    p = sub.add_parser("runs", help="Show the run registry")
    p.add_argument("--db", default=None)
    p.set_defaults(handler=cmd_runs)

    p = sub.add_parser("replay", help="Re-run a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(handler=cmd_replay)
    return parser


# --------------------------------------------------
# Dispatch
# --------------------------------------------------
def _command_name(args) -> str:
    if args.command == "dataset":
        return f"dataset-{args.dataset_command}"
    return args.command


def _frozen_argv(argv: List[str], args) -> List[str]:
    """
    argv with every environment-backed option spelled out

    Seed, worker count and registry URL otherwise fall back to DEFAULT_SEED,
    MOLPROP_WORKERS and DATABASE_URL, so a replay elsewhere would differ.
    """
    resolved = {
        "--seed": lambda: args.seed,
        "--workers": lambda: _workers(args),
        "--db": lambda: args.db or app_config.DATABASE_URL,
    }
    # argparse accepts unambiguous prefixes, so '--se 3' already sets the seed
    names = [token.split("=", 1)[0] for token in argv if token.startswith("--") and len(token) > 2]
    frozen = list(argv)
    for flag, value in resolved.items():
        given = any(flag.startswith(name) for name in names)
        if hasattr(args, flag[2:]) and not given:
            frozen += [flag, str(value())]
    return frozen


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parses argv, runs the command and returns its exit status

    0 success, 1 usage / configuration error, 2 data / validation /
    checkpoint error, 3 numerical failure.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1

    handler: Callable = args.handler
    if handler is cmd_replay:
        try:
            return cmd_replay(args)
        except MolPropError as e:
            logger.error(f"{type(e).__name__}: {e}")
            return e.exit_code

    manifest_dir = Path(args.manifest_dir or app_config.MANIFEST_DIR)
    args.manifest_dir = str(manifest_dir)
    command = _command_name(args)
    manifest = RunManifest(
        run_id=_new_run_id(command),
        command=command,
        argv=_frozen_argv(argv, args),
        started_at=utc_timestamp(),
    )
    manifest.write(manifest_dir)
    try:
        status = handler(args, manifest)
        manifest.status = "ok" if status == 0 else "failed"
    except MolPropError as e:
        logger.error(f"{type(e).__name__}: {e}")
        manifest.status, manifest.error = "failed", f"{type(e).__name__}: {e}"
        status = e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        manifest.status, manifest.error = "failed", f"{type(e).__name__}: {e}"
        status = 2
    except Exception as e:
        manifest.status, manifest.error = "failed", f"{type(e).__name__}: {e}"
        raise
    finally:
        manifest.finished_at = utc_timestamp()
        manifest.hash_files()
        manifest.write(manifest_dir)
    logger.debug(f"manifest {manifest.path(manifest_dir)}")
    return status
