"""Command-line experiment driver.

Settings resolve as built-in defaults < ``--config`` file < flags.  A flag
value with commas (``--lambda 0.1,0.5,0.9``) sweeps over those values.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from xgsl import __version__
from xgsl.config import FLAG_NAMES, ConfigError, TrainConfig, attribute_for, coerce, read_config_file
from xgsl.data import (
    DatasetBundle,
    DatasetError,
    SynthSpec,
    atomic_write_text,
    generate_synthetic,
    load_dataset,
    make_splits,
    save_dataset,
    with_splits,
)
from xgsl.graph import (
    Graph,
    PivotStructure,
    delete_edges,
    homophily_ratio,
    inject_edges,
    neighborhood_variance,
)
from xgsl.learner import LearnerParams
from xgsl.training import DivergenceError, train_sources, train_target

OUTPUT_ENV = "XGSL_OUTPUT_ROOT"
CHECKPOINT_FORMAT = "xgsl-learner"
CHECKPOINT_VERSION = 1

log = logging.getLogger("xgsl")

_ATTR_TO_FLAG = {attr: flag for flag, attr in FLAG_NAMES.items()}
# seeds are chosen with --seeds / --repeats instead
CONFIG_ATTRS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "seed"]


def flag_for(attr: str) -> str:
    return _ATTR_TO_FLAG.get(attr, attr.replace("_", "-"))


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, obj) -> Path:
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def summarize(values) -> dict:
    """Mean and sample standard deviation."""
    arr = np.asarray([v for v in values if v is not None and math.isfinite(v)], dtype=float)
    if arr.size == 0:
        return {"mean": None, "std": None, "n": 0}
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}


def output_dir(out: str | None, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        path = Path(os.environ.get(OUTPUT_ENV, "xgsl-runs")) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class Resolved:
    config: TrainConfig
    sweep: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)

    def grid(self) -> list[dict]:
        if not self.sweep:
            return [{}]
        keys = list(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]


def _parse_values(attr: str, raw: str) -> list:
    return [coerce(attr, part.strip()) for part in str(raw).split(",")]


def resolve(config_path: str | None, flags: dict[str, str | None], seeds: str | None, repeats: int | None) -> Resolved:
    """Layer defaults, config file and explicit flags; collect sweep axes."""
    values: dict[str, Any] = {}
    sweep: dict[str, list] = {}
    layers = []
    if config_path:
        layers.append({attribute_for(k): v for k, v in read_config_file(config_path).items()})
    layers.append({attr: v for attr, v in flags.items() if v is not None})
    for layer in layers:
        for attr, raw in layer.items():
            parsed = _parse_values(attr, raw)
            if len(parsed) > 1:
                sweep[attr] = parsed
                values.pop(attr, None)
            else:
                values[attr] = parsed[0]
                sweep.pop(attr, None)
    config = TrainConfig(**values)
    for combo in Resolved(config, sweep).grid():
        config.replace(**combo)  # validates every grid point up front
    if seeds and repeats:
        raise ConfigError("give --seeds or --repeats, not both")
    if seeds:
        seed_list = [int(s) for s in seeds.split(",")]
    elif repeats:
        seed_list = list(range(config.seed, config.seed + repeats))
    else:
        seed_list = [config.seed]
    return Resolved(config, sweep, seed_list)


def config_options(f):
    """Attach one string-valued option per TrainConfig field plus the common run options."""
    for attr in reversed(CONFIG_ATTRS):
        f = click.option(f"--{flag_for(attr)}", f"opt_{attr}", default=None, help=f"override '{attr}'; commas sweep")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="flat key = value file")(f)
    f = click.option("--seeds", default=None, help="comma-separated seed list")(f)
    f = click.option("--repeats", type=int, default=None, help="run seeds seed..seed+N-1")(f)
    f = click.option("--workers", type=int, default=1, show_default=True, help="parallel worker processes")(f)
    f = click.option("--out", default=None, help=f"output directory (default ${OUTPUT_ENV}/<command>)")(f)
    f = click.option("--plot/--no-plot", default=True, show_default=True, help="render figures next to the data")(f)
    f = click.option("--split", default="file", show_default=True, help="file | ratio:a,b,c | per-class:k[,valid,test]")(f)
    return f


def _resolve_from_kwargs(kwargs: dict) -> Resolved:
    flags = {attr: kwargs.pop(f"opt_{attr}") for attr in CONFIG_ATTRS}
    return resolve(kwargs.pop("config_path"), flags, kwargs.pop("seeds"), kwargs.pop("repeats"))


# ---------------------------------------------------------------------------
# datasets and checkpoints
# ---------------------------------------------------------------------------


def apply_split(bundle: DatasetBundle, split: str) -> Graph:
    g = bundle.graph
    if split == "file":
        if not g.train_mask.any():
            raise ConfigError(f"{bundle.name}: no masks.tsv; choose --split ratio:... or per-class:...")
        return g
    kind, _, args = split.partition(":")
    nums = [float(x) for x in args.split(",") if x]
    if kind == "ratio" and len(nums) == 3:
        return with_splits(g, make_splits(g, ratios=tuple(nums), seed=0))
    if kind == "per-class" and 1 <= len(nums) <= 3:
        k = int(nums[0])
        n_valid = int(nums[1]) if len(nums) > 1 else 500
        n_test = int(nums[2]) if len(nums) > 2 else 1000
        return with_splits(g, make_splits(g, per_class=k, n_valid=n_valid, n_test=n_test, seed=0))
    raise ConfigError(f"unrecognised --split {split!r}")


def load(path: str, split: str) -> tuple[Graph, dict]:
    bundle = load_dataset(path)
    g = apply_split(bundle, split)
    return g, {"name": bundle.name, "path": str(path), "sha256": bundle.content_hash, "split": split}


def save_checkpoint(path: Path, learner: LearnerParams, config: TrainConfig, provenance: dict) -> Path:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "learner": learner.to_dict(),
        "config": config.to_dict(),
        **provenance,
    }
    return write_json(path, payload)


def load_checkpoint(path: str) -> tuple[LearnerParams, dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read checkpoint ({exc})") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a learner checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: checkpoint version {payload.get('version')} unsupported (need {CHECKPOINT_VERSION})")
    return LearnerParams.from_dict(payload["learner"]), payload


def check_compatible(learner: LearnerParams, config: TrainConfig, path: str) -> None:
    """The learner works on hidden embeddings, so only the hidden width must agree."""
    if learner.dim != config.hidden:
        raise ConfigError(
            f"{path}: checkpoint embeds in {learner.dim} dims but --hidden is {config.hidden}"
        )


# ---------------------------------------------------------------------------
# job execution
# ---------------------------------------------------------------------------


@dataclass
class Job:
    command: str
    seed: int
    fn: Callable
    kwargs: dict
    label: dict = field(default_factory=dict)


def _call(job: Job):
    try:
        return True, job.fn(**job.kwargs)
    except (ConfigError, DivergenceError, FloatingPointError, ValueError, AssertionError) as exc:
        return False, f"{type(exc).__name__}: {exc}"
    except Exception:  # keep the batch alive; the traceback goes into the report
        return False, traceback.format_exc(limit=3)


def run_jobs(jobs: list[Job], workers: int) -> tuple[list[tuple[Job, Any]], list[dict]]:
    """Run jobs in order (or in a process pool); returns successes and failures."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_call, jobs))
    else:
        outcomes = [_call(j) for j in jobs]
    done, failed = [], []
    for job, (ok, value) in zip(jobs, outcomes):
        if ok:
            done.append((job, value))
        else:
            failed.append({"command": job.command, "seed": job.seed, **job.label, "error": value})
    return done, failed


def finish(failed: list[dict]) -> None:
    if failed:
        click.echo("failed runs:", err=True)
        for f in failed:
            click.echo(f"  ({f['command']}, seed={f['seed']}): {f['error'].splitlines()[-1]}", err=True)
        sys.exit(1)


# ---------------------------------------------------------------------------
# job bodies (top level so worker processes can import them)
# ---------------------------------------------------------------------------


def _run_record(res) -> dict:
    return {
        "test_acc": res.test_acc,
        "val_acc": res.val_acc,
        "best_epoch": res.best_epoch,
        "epochs_run": res.epochs_run,
        "wall_clock_s": res.wall_clock_s,
    }


def job_target(graph: Graph, learner: LearnerParams | None, config: TrainConfig, seed: int, trace_path: str | None):
    res = train_target(graph, learner, config, seed=seed)
    if trace_path:
        atomic_write_text(Path(trace_path), res.trace.to_csv())
    return _run_record(res)


def job_sources(graphs, names, config: TrainConfig, seed: int):
    cfg = config.replace(seed=seed)
    res = train_sources(graphs, cfg, names=names)
    return res.learner, res.traces, [h[-1] if h else None for h in res.val_history]


def job_ablate(graphs, names, target: Graph, config: TrainConfig, seed: int, trace_path: str | None):
    learner, _, _ = job_sources(graphs, names, config, seed)
    return job_target(target, learner, config, seed, trace_path)


def job_diagnose(graph: Graph, learner: LearnerParams, config: TrainConfig, seed: int, every: int):
    curve = []

    def record(epoch, state, inference):
        if epoch % every == 0 and inference.gamma is not None:
            curve.append((epoch, homophily_ratio(state.graph, PivotStructure(inference.gamma))))

    res = train_target(graph, learner, config, seed=seed, diagnostics=record)
    if res.final_gamma is not None and (not curve or curve[-1][0] != res.epochs_run):
        curve.append((res.epochs_run, homophily_ratio(graph, PivotStructure(res.final_gamma))))
    learned = PivotStructure(res.final_gamma) if res.final_gamma is not None else None
    return {
        **_run_record(res),
        "curve": curve,
        "input_homophily": homophily_ratio(graph),
        "final_latent_homophily": curve[-1][1] if curve else None,
        "variance_input": neighborhood_variance(graph),
        "variance_learned": neighborhood_variance(graph, learned) if learned else None,
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="xgsl")
@click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")
def main(verbose: bool) -> None:
    """Open-world graph structure learning experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _handle_errors(fn):
    """Turn configuration and dataset errors into a usage-style exit."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DatasetError) as exc:
            raise click.UsageError(str(exc)) from None

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _header(command: str, resolved: Resolved, datasets: dict) -> dict:
    return {
        "command": command,
        "package_version": __version__,
        "config": resolved.config.to_dict(),
        "sweep": resolved.sweep,
        "seeds": resolved.seeds,
        "datasets": datasets,
    }


@main.command()
@click.argument("sources", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@config_options
@_handle_errors
def train(sources, out, plot, split, workers, **kwargs):
    """Train the shared structure learner on SOURCES (dataset directories)."""
    resolved = _resolve_from_kwargs(kwargs)
    if resolved.sweep:
        raise ConfigError("train does not sweep; run it once per setting")
    loaded = [load(p, split) for p in sources]
    graphs = [g for g, _ in loaded]
    names = [meta["name"] for _, meta in loaded]
    datasets = {meta["name"]: meta for _, meta in loaded}
    outdir = output_dir(out, "train")
    jobs = [Job("train", s, job_sources, dict(graphs=graphs, names=names, config=resolved.config, seed=s)) for s in resolved.seeds]
    done, failed = run_jobs(jobs, workers)
    runs = []
    for job, (learner, traces, finals) in done:
        ckpt = outdir / ("learner.json" if len(resolved.seeds) == 1 else f"learner_seed{job.seed}.json")
        save_checkpoint(ckpt, learner, resolved.config.replace(seed=job.seed), {"sources": datasets, "seed": job.seed})
        for name, trace in zip(names, traces):
            atomic_write_text(outdir / f"trace_{name}_seed{job.seed}.csv", trace.to_csv())
            if plot:
                from xgsl import report

                report.plot_trace(trace, outdir / f"trace_{name}_seed{job.seed}.png")
        runs.append({"seed": job.seed, "checkpoint": ckpt.name, "final_val_acc": dict(zip(names, finals))})
    write_json(outdir / "summary.json", {**_header("train", resolved, datasets), "runs": runs, "failed": failed})
    click.echo(f"wrote {len(runs)} checkpoint(s) to {outdir}")
    finish(failed)


def _target_batch(command: str, target: Graph, learner, resolved: Resolved, outdir: Path, workers: int, force_baseline=False):
    """Jobs over every (grid point, seed) pair; returns per-point results and failures."""
    jobs = []
    grid = resolved.grid()
    for gi, overrides in enumerate(grid):
        cfg = resolved.config.replace(**overrides)
        if force_baseline:
            cfg = cfg.replace(lam=1.0)
        tag = "" if len(grid) == 1 else f"_p{gi}"
        for s in resolved.seeds:
            jobs.append(
                Job(
                    command,
                    s,
                    job_target,
                    dict(
                        graph=target,
                        learner=None if force_baseline else learner,
                        config=cfg,
                        seed=s,
                        trace_path=str(outdir / f"trace{tag}_seed{s}.csv"),
                    ),
                    {"point": gi},
                )
            )
    done, failed = run_jobs(jobs, workers)
    points = []
    for gi, overrides in enumerate(grid):
        runs = [{"seed": j.seed, **r} for j, r in done if j.label["point"] == gi]
        points.append({"overrides": overrides, "runs": runs, "summary": summarize(r["test_acc"] for r in runs)})
    return points, failed


def _emit_metrics(command, resolved, datasets, points, failed, outdir, plot, extra=None) -> dict:
    payload = {
        **_header(command, resolved, datasets),
        **(extra or {}),
        "points": points,
        "summary": points[0]["summary"] if len(points) == 1 else None,
        "failed": failed,
    }
    write_json(outdir / "metrics.json", payload)
    if plot and len(resolved.sweep) == 1:
        from xgsl import report

        key = next(iter(resolved.sweep))
        report.plot_sweep([p for p in points if p["summary"]["n"]], key, outdir / f"sweep_{key}.png")
    for p in points:
        s = p["summary"]
        label = ", ".join(f"{k}={v}" for k, v in p["overrides"].items()) or command
        if s["n"]:
            click.echo(f"{label}: test_acc {s['mean']:.4f} +/- {s['std']:.4f} (n={s['n']})")
    return payload


@main.command()
@click.argument("target", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@config_options
@_handle_errors
def transfer(target, checkpoint, out, plot, split, workers, **kwargs):
    """Train a GNN on TARGET with the frozen learner from CHECKPOINT."""
    resolved = _resolve_from_kwargs(kwargs)
    learner, payload = load_checkpoint(checkpoint)
    for overrides in resolved.grid():
        check_compatible(learner, resolved.config.replace(**overrides), checkpoint)
    g, meta = load(target, split)
    outdir = output_dir(out, "transfer")
    points, failed = _target_batch("transfer", g, learner, resolved, outdir, workers)
    datasets = {"target": meta, "checkpoint_sources": payload.get("sources", {})}
    _emit_metrics("transfer", resolved, datasets, points, failed, outdir, plot, {"checkpoint": str(checkpoint)})
    finish(failed)


@main.command()
@click.argument("target", type=click.Path(exists=True, file_okay=False))
@config_options
@_handle_errors
def baseline(target, out, plot, split, workers, **kwargs):
    """Plain GCN on TARGET (blend weight 1, no learner)."""
    resolved = _resolve_from_kwargs(kwargs)
    resolved.config = resolved.config.replace(lam=1.0)
    resolved.sweep.pop("lam", None)
    g, meta = load(target, split)
    outdir = output_dir(out, "baseline")
    points, failed = _target_batch("baseline", g, None, resolved, outdir, workers, force_baseline=True)
    _emit_metrics("baseline", resolved, {"target": meta}, points, failed, outdir, plot)
    finish(failed)


@main.command()
@click.argument("target", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--fractions", default="0.1,0.2,0.3,0.4,0.5", show_default=True, help="edge-deletion fractions")
@config_options
@_handle_errors
def attack(target, checkpoint, fractions, out, plot, split, workers, **kwargs):
    """Accuracy of transfer and GCN after deleting random edges of TARGET."""
    resolved = _resolve_from_kwargs(kwargs)
    if resolved.sweep:
        raise ConfigError("attack does not sweep hyperparameters")
    fracs = [float(x) for x in fractions.split(",")]
    if any(not 0 <= f <= 1 for f in fracs):
        raise ConfigError("fractions must lie in [0, 1]")
    learner, payload = load_checkpoint(checkpoint)
    check_compatible(learner, resolved.config, checkpoint)
    g, meta = load(target, split)
    outdir = output_dir(out, "attack")
    jobs = []
    for f in fracs:
        for s in resolved.seeds:
            attacked = delete_edges(g, f, seed=[s, 71])
            for model, lrn in (("transfer", learner), ("gcn", None)):
                cfg = resolved.config if lrn is not None else resolved.config.replace(lam=1.0)
                jobs.append(Job("attack", s, job_target, dict(graph=attacked, learner=lrn, config=cfg, seed=s, trace_path=None), {"fraction": f, "model": model}))
    done, failed = run_jobs(jobs, workers)
    rows, runs = [], []
    for f in fracs:
        for model in ("transfer", "gcn"):
            accs = [r["test_acc"] for j, r in done if j.label == {"fraction": f, "model": model}]
            s = summarize(accs)
            rows.append({"fraction": f, "model": model, "mean_acc": s["mean"], "std": s["std"], "n": s["n"]})
    for j, r in done:
        runs.append({"seed": j.seed, **j.label, **r})
    lines = ["fraction,model,mean_acc,std,n"] + [
        f"{r['fraction']!r},{r['model']},{'' if r['mean_acc'] is None else repr(r['mean_acc'])},{'' if r['std'] is None else repr(r['std'])},{r['n']}"
        for r in rows
    ]
    atomic_write_text(outdir / "attack.csv", "\n".join(lines) + "\n")
    datasets = {"target": meta, "checkpoint_sources": payload.get("sources", {})}
    write_json(outdir / "attack.json", {**_header("attack", resolved, datasets), "fractions": fracs, "rows": rows, "runs": runs, "failed": failed})
    if plot:
        from xgsl import report

        report.plot_attack([r for r in rows if r["n"]], outdir / "attack.png")
    for r in rows:
        if r["n"]:
            click.echo(f"fraction {r['fraction']:.2f} {r['model']:>8}: {r['mean_acc']:.4f} +/- {r['std']:.4f}")
    finish(failed)


@main.command()
@click.argument("target", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--every", default=5, show_default=True, help="record latent homophily every N epochs")
@config_options
@_handle_errors
def diagnose(target, checkpoint, every, out, plot, split, workers, **kwargs):
    """Homophily and neighbourhood variance of the learned structure on TARGET."""
    resolved = _resolve_from_kwargs(kwargs)
    if resolved.sweep:
        raise ConfigError("diagnose does not sweep hyperparameters")
    learner, payload = load_checkpoint(checkpoint)
    check_compatible(learner, resolved.config, checkpoint)
    g, meta = load(target, split)
    outdir = output_dir(out, "diagnose")
    jobs = [Job("diagnose", s, job_diagnose, dict(graph=g, learner=learner, config=resolved.config, seed=s, every=every)) for s in resolved.seeds]
    done, failed = run_jobs(jobs, workers)
    runs = []
    for job, r in done:
        lines = ["epoch,latent_homophily,input_homophily"] + [f"{e},{h!r},{r['input_homophily']!r}" for e, h in r["curve"]]
        atomic_write_text(outdir / f"diagnostics_seed{job.seed}.csv", "\n".join(lines) + "\n")
        if plot and r["curve"]:
            from xgsl import report

            epochs, values = zip(*r["curve"])
            report.plot_homophily(epochs, values, r["input_homophily"], outdir / f"homophily_seed{job.seed}.png")
            if r["variance_learned"] is not None:
                report.plot_variance(r["variance_input"], r["variance_learned"], outdir / f"variance_seed{job.seed}.png")
        runs.append({"seed": job.seed, **{k: v for k, v in r.items() if k != "curve"}})
    datasets = {"target": meta, "checkpoint_sources": payload.get("sources", {})}
    write_json(outdir / "diagnostics.json", {**_header("diagnose", resolved, datasets), "every": every, "runs": runs, "failed": failed})
    for r in runs:
        click.echo(
            f"seed {r['seed']}: homophily input {r['input_homophily']:.3f} latent {r['final_latent_homophily'] or float('nan'):.3f}; "
            f"variance input {r['variance_input']:.4f} learned {r['variance_learned'] if r['variance_learned'] is not None else float('nan'):.4f}"
        )
    finish(failed)


ABLATIONS = {"no-iter": {"max_iters": 1}, "no-reg": {"alpha": 0.0, "rho": 0.0}}


@main.command()
@click.argument("target", type=click.Path(exists=True, file_okay=False))
@click.option("--source", "sources", multiple=True, required=True, type=click.Path(exists=True, file_okay=False), help="source dataset (repeat)")
@click.option("--which", type=click.Choice(sorted(ABLATIONS)), required=True)
@config_options
@_handle_errors
def ablate(target, sources, which, out, plot, split, workers, **kwargs):
    """Retrain the learner without iteration or without the structure reward, then transfer."""
    resolved = _resolve_from_kwargs(kwargs)
    resolved.config = resolved.config.replace(**ABLATIONS[which])
    for attr in ABLATIONS[which]:
        resolved.sweep.pop(attr, None)
    loaded = [load(p, split) for p in sources]
    g, meta = load(target, split)
    names = [m["name"] for _, m in loaded]
    outdir = output_dir(out, "ablate")
    jobs = []
    grid = resolved.grid()
    for gi, overrides in enumerate(grid):
        cfg = resolved.config.replace(**overrides)
        tag = "" if len(grid) == 1 else f"_p{gi}"
        for s in resolved.seeds:
            kw = dict(graphs=[x for x, _ in loaded], names=names, target=g, config=cfg, seed=s, trace_path=str(outdir / f"trace_{which}{tag}_seed{s}.csv"))
            jobs.append(Job("ablate", s, job_ablate, kw, {"point": gi}))
    done, failed = run_jobs(jobs, workers)
    points = []
    for gi, overrides in enumerate(grid):
        runs = [{"seed": j.seed, **r} for j, r in done if j.label["point"] == gi]
        points.append({"overrides": overrides, "runs": runs, "summary": summarize(r["test_acc"] for r in runs)})
    datasets = {"target": meta, "sources": {m["name"]: m for _, m in loaded}}
    _emit_metrics("ablate", resolved, datasets, points, failed, outdir, plot, {"which": which})
    finish(failed)


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--nodes", default=800, show_default=True)
@click.option("--classes", default=4, show_default=True)
@click.option("--p-in", default=0.02, show_default=True)
@click.option("--p-out", default=0.002, show_default=True)
@click.option("--feature-dim", default=16, show_default=True)
@click.option("--snr", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--inject", default=0.0, show_default=True, help="add this fraction of random noise edges")
@click.option("--name", default=None)
@_handle_errors
def synth(out_dir, nodes, classes, p_in, p_out, feature_dim, snr, seed, inject, name):
    """Write a stochastic-block-model dataset to OUT_DIR."""
    try:
        spec = SynthSpec(nodes, classes, p_in, p_out, feature_dim, snr, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bundle = generate_synthetic(spec, name or Path(out_dir).name)
    if inject:
        bundle = dataclasses.replace(bundle, graph=inject_edges(bundle.graph, inject, seed=[seed, 31]))
    save_dataset(bundle, out_dir)
    g = bundle.graph
    info = {
        "path": str(out_dir),
        "spec": dataclasses.asdict(spec),
        "inject": inject,
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "homophily": homophily_ratio(g) if g.n_classes > 1 else None,
        "sha256": load_dataset(out_dir).content_hash,
    }
    click.echo(json.dumps(_jsonable(info), sort_keys=True))


@main.command()
@click.option("--fixtures", default=20, show_default=True, help="random fixtures per suite")
@click.option("--tol", default=1e-4, show_default=True)
@click.option("--out", default=None, help="directory for gradcheck.json")
def gradcheck(fixtures, tol, out):
    """Finite-difference check of every primitive and loss term."""
    from xgsl.gradcheck import run_all

    result = run_all(fixtures, tol)
    outdir = output_dir(out, "gradcheck")
    write_json(outdir / "gradcheck.json", {"command": "gradcheck", "package_version": __version__, **result})
    for s in result["suites"]:
        status = "ok" if s["passed"] else "FAIL"
        click.echo(f"{status:4} {s['name']:<32} max rel err {s['max_rel_error']:.2e} over {s['n_fixtures']} fixtures")
    if not result["passed"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
