"""Command-line entry points.

Every command that produces files takes an --out directory, writes
delimited outputs there (the normative record), and drops a manifest.json
recording the command and its parameters so a run can be replayed. Floats
are serialized with repr, so replaying a command byte-reproduces its CSVs
except where wall-clock columns are involved.

Exit codes: 0 success, 2 bad configuration or arguments, 3 missing input
(checkpoints, sample files, caches), 4 numerical failure during training.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__, algebra, report
from .benchmark import (METHODS, TRIALS_GRID, ablate, aggregate_deltas,
                        checkpoint_path, ensure_models, histogram_table,
                        mean_separation, run_scenario)
from .energynet import TrainConfig, TrainingDivergedError, load_checkpoint
from .lift import (NOISE_STRATEGIES, TIMESTEP_STRATEGIES, LiftConfig,
                   lift_cached, lift_naive)
from .mcmc import KINDS, McmcConfig, annealed_sample
from .metrics import accuracy, chamfer
from .pixellift import DEFAULT_TAU, LIFT_MODES, CacheFormatError, read_cache, \
    verdict_for_prompt
from .sampler import ComposedScoreSpec, cache_from_disk, cache_to_disk, generate
from .schedule import make_linear
from .scenarios import COMPONENTS, SCENARIOS

EXIT_BAD_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_NUMERICAL = 4

_NOISE_CHOICES = NOISE_STRATEGIES
_TSTRAT_CHOICES = TIMESTEP_STRATEGIES


def _guarded(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (FileNotFoundError, CacheFormatError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_MISSING_INPUT)
        except TrainingDivergedError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (ValueError, KeyError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_BAD_CONFIG)

    return wrapper


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(out_dir: Path, command: str, params: dict) -> None:
    clean = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in params.items()}
    payload = {"command": command, "package_version": __version__,
               "params": clean}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    (out_dir / "manifest.json").write_text(text)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_models(models_dir, conditions) -> dict:
    """Load checkpoints that must already exist; never trains."""
    out = {}
    for cond in conditions:
        path = checkpoint_path(models_dir, cond)
        if not path.exists():
            raise FileNotFoundError(
                f"missing checkpoint {path}; run 'complift train' first")
        out[cond] = load_checkpoint(path)
    return out


def _read_points(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such sample file: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path} must have 'x' and 'y' columns")
        pts = [(float(r["x"]), float(r["y"])) for r in reader]
    return np.array(pts, dtype=np.float32).reshape(-1, 2)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _parse_grid(text: str) -> tuple[int, ...]:
    try:
        grid = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise click.UsageError(f"bad trials grid {text!r}")
    if not grid or any(v < 1 for v in grid):
        raise click.UsageError("trials grid needs positive integers")
    return grid


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False),
              help="YAML file with per-command option defaults.")
@click.pass_context
def main(ctx, config_path):
    """Compositional sampling and rejection filtering on 2D densities."""
    if config_path:
        with open(config_path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise click.UsageError("config file must be a mapping of "
                                   "command names to option defaults")
        ctx.default_map = data


@main.command()
@click.option("--scenario", "scenario_ids", multiple=True,
              type=click.Choice(sorted(SCENARIOS)),
              help="Train every component this scenario references.")
@click.option("--component", "components", multiple=True,
              type=click.Choice(sorted(COMPONENTS)))
@click.option("--all", "train_all", is_flag=True,
              help="Train every registered component.")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False),
              help="Checkpoint directory.")
@click.option("--steps", default=10000, show_default=True)
@click.option("--batch", default=256, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--hidden", default=128, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--timesteps", default=50, show_default=True)
@click.option("--dataset-size", default=8000, show_default=True)
@_guarded
def train(scenario_ids, components, train_all, out, steps, batch, lr, hidden,
          seed, timesteps, dataset_size):
    """Train per-component denoisers and save checkpoints.

    Already-saved components are left untouched, so reruns only fill gaps.
    """
    conds = set(components)
    for sid in scenario_ids:
        conds |= set(SCENARIOS[sid].conditions)
    if train_all:
        conds = set(COMPONENTS)
    if not conds:
        raise click.UsageError("nothing to train: pass --scenario, "
                               "--component, or --all")
    out_dir = _out_dir(out)
    cfg = TrainConfig(steps=steps, batch=batch, lr=lr, hidden=hidden,
                      seed=seed)
    ensure_models(sorted(conds), out_dir, schedule=make_linear(timesteps),
                  config=cfg, dataset_size=dataset_size, log=click.echo)
    _write_manifest(out_dir, "train", {
        "components": sorted(conds), "steps": steps, "batch": batch,
        "lr": lr, "hidden": hidden, "seed": seed, "timesteps": timesteps,
        "dataset_size": dataset_size})
    click.echo(f"checkpoints ready in {out_dir}")


@main.command()
@click.option("--expr", required=True,
              help="Composition over component names, e.g. 'ring8 & strip'.")
@click.option("--n", default=8000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--models", "models_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--record/--no-record", default=False,
              help="Also persist the denoising trajectory as a cache.")
@click.option("--gamma", default=1.0, show_default=True)
@click.option("--temperature", default=4.0, show_default=True)
@click.option("--alpha", default=0.9, show_default=True,
              help="Surrogate scale stored with a recorded cache.")
@_guarded
def sample(expr, n, seed, models_dir, out, record, gamma, temperature, alpha):
    """Draw samples from a composed model; optionally record the run."""
    spec = ComposedScoreSpec.from_expression(expr, gamma=gamma,
                                             temperature=temperature)
    models = _load_models(models_dir, spec.conditions)
    points, cache = generate(models, spec, n, seed, record=record)
    out_dir = _out_dir(out)
    _write_csv(out_dir / "samples.csv", ("x", "y"), points)
    if record:
        cache_to_disk(cache, out_dir / "cache", alpha=alpha,
                      metadata={"expression": expr})
    _write_manifest(out_dir, "sample", {
        "expr": expr, "n": n, "seed": seed, "record": record,
        "gamma": gamma, "temperature": temperature, "alpha": alpha})
    click.echo(f"wrote {n} samples to {out_dir / 'samples.csv'}")


def _write_verdicts(out_dir: Path, points: np.ndarray, result) -> None:
    header = ["index", "score", "accept"]
    header += [f"lift_{c}" for c in result.conditions]
    rows = [[i, result.scores[i], bool(result.accepts[i]), *result.lifts[i]]
            for i in range(len(result))]
    _write_csv(out_dir / "verdicts.csv", header, rows)
    _write_csv(out_dir / "filtered.csv", ("x", "y"), points[result.accepts])


@main.command("filter")
@click.option("--method", type=click.Choice(("naive", "cached")),
              default="naive", show_default=True)
@click.option("--expr", default=None,
              help="Composition to test; cached runs default to the "
                   "conjunction of the recorded conditions.")
@click.option("--samples", "samples_path", type=click.Path(dir_okay=False),
              help="Input points (naive method).")
@click.option("--models", "models_dir", type=click.Path(file_okay=False),
              help="Checkpoint directory (naive method).")
@click.option("--cache", "cache_dir", type=click.Path(file_okay=False),
              help="Recorded trajectory directory (cached method).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--trials", default=1000, show_default=True)
@click.option("--noise", default="shared-per-trial", show_default=True,
              type=click.Choice(_NOISE_CHOICES))
@click.option("--tstrategy", default="uniform", show_default=True,
              type=click.Choice(_TSTRAT_CHOICES))
@click.option("--t-fixed", default=None, type=int,
              help="Timestep for the fixed strategy.")
@click.option("--alpha", default=0.9, show_default=True)
@click.option("--seed", default=0, show_default=True,
              help="Trial noise seed (naive method).")
@_guarded
def filter_cmd(method, expr, samples_path, models_dir, cache_dir, out, trials,
               noise, tstrategy, t_fixed, alpha, seed):
    """Accept or reject samples by their estimated lift.

    Writes verdicts.csv (per-sample score, verdict, and per-condition
    lifts) and filtered.csv (the accepted points).
    """
    out_dir = _out_dir(out)
    if method == "cached":
        if not cache_dir:
            raise click.UsageError("cached filtering needs --cache")
        cache = cache_from_disk(cache_dir)
        if expr is None:
            expr = " & ".join(cache.cond_preds)
        cnf = algebra.to_cnf(algebra.parse(expr))
        cfg = LiftConfig(unconditional="alpha-surrogate", alpha=alpha)
        result = lift_cached(cache, cnf, cfg)
        points = cache.x0
    else:
        if not (samples_path and models_dir and expr):
            raise click.UsageError("naive filtering needs --samples, "
                                   "--models, and --expr")
        points = _read_points(samples_path)
        cnf = algebra.to_cnf(algebra.parse(expr))
        models = _load_models(models_dir, algebra.cnf_variables(cnf))
        cfg = LiftConfig(trials=trials, noise=noise, tstrategy=tstrategy,
                         t_fixed=t_fixed, alpha=alpha)
        result = lift_naive(points, models, cnf, cfg, seed=seed)
    _write_verdicts(out_dir, points, result)
    _write_manifest(out_dir, "filter", {
        "method": method, "expr": expr, "trials": trials, "noise": noise,
        "tstrategy": tstrategy, "t_fixed": t_fixed, "alpha": alpha,
        "seed": seed,
        "samples": samples_path, "models": models_dir, "cache": cache_dir})
    kept = int(result.accepts.sum())
    click.echo(f"accepted {kept}/{len(result)} "
               f"(ratio {result.acceptance_ratio:.4f})")


@main.command()
@click.option("--expr", required=True)
@click.option("--kind", default="hmc", show_default=True,
              type=click.Choice(KINDS))
@click.option("--n", default=2000, show_default=True)
@click.option("--eta", default=0.05, show_default=True)
@click.option("--steps-per-level", default=10, show_default=True)
@click.option("--leapfrog", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--gamma", default=1.0, show_default=True)
@click.option("--temperature", default=4.0, show_default=True)
@click.option("--models", "models_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def mcmc(expr, kind, n, eta, steps_per_level, leapfrog, seed, gamma,
         temperature, models_dir, out):
    """Sample the composed density with annealed Langevin or Hamiltonian
    dynamics instead of ancestral sampling."""
    spec = ComposedScoreSpec.from_expression(expr, gamma=gamma,
                                             temperature=temperature)
    models = _load_models(models_dir, spec.conditions)
    cfg = McmcConfig(kind=kind, steps_per_level=steps_per_level, eta=eta,
                     leapfrog=leapfrog, seed=seed)
    points = annealed_sample(models, spec, n, cfg)
    out_dir = _out_dir(out)
    _write_csv(out_dir / "samples.csv", ("x", "y"), points)
    _write_manifest(out_dir, "mcmc", {
        "expr": expr, "kind": kind, "n": n, "eta": eta,
        "steps_per_level": steps_per_level, "leapfrog": leapfrog,
        "seed": seed, "gamma": gamma, "temperature": temperature})
    click.echo(f"wrote {n} samples to {out_dir / 'samples.csv'}")


@main.command("eval")
@click.option("--samples", "samples_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--scenario", "scenario_id", required=True,
              type=click.Choice(sorted(SCENARIOS)))
@click.option("--reference-seed", default=90, show_default=True,
              help="Seed for the reference cloud used by the distance metric.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def eval_cmd(samples_path, scenario_id, reference_seed, out):
    """Score a sample file against a scenario's ground truth."""
    scenario = SCENARIOS[scenario_id]
    points = _read_points(samples_path)
    reference = scenario.sample_ground_truth(scenario.dataset_size,
                                             seed=reference_seed)
    acc = accuracy(points, scenario)
    cham = None
    if points.shape[0] and reference.shape[0]:
        cham = chamfer(points, reference)
    out_dir = _out_dir(out)
    _write_csv(out_dir / "metrics.csv", ("key", "value"), [
        ("n", points.shape[0]), ("accuracy", acc), ("chamfer", cham)])
    _write_manifest(out_dir, "eval", {
        "samples": samples_path, "scenario": scenario_id,
        "reference_seed": reference_seed})
    click.echo(f"accuracy={_fmt(acc) or 'n/a'} chamfer={_fmt(cham) or 'n/a'}")


def _bench_worker(sid, models_dir, methods, n, seed, mcmc_kwargs):
    scenario = SCENARIOS[sid]
    models = _load_models(models_dir, scenario.conditions)
    cfg = McmcConfig(**mcmc_kwargs) if mcmc_kwargs else None
    return run_scenario(scenario, models, methods, n=n, seed=seed,
                        mcmc_config=cfg)


_RESULT_HEADER = ("scenario", "method", "n", "accepted", "accuracy",
                  "chamfer", "ratio", "wall_ms", "seed")


@main.command()
@click.option("--scenarios", "scenario_arg", default="all", show_default=True,
              help="'all' or a comma-separated list of scenario ids.")
@click.option("--methods", "methods_arg", default=",".join(METHODS),
              show_default=True)
@click.option("--n", default=8000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--models", "models_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--jobs", default=None, type=int,
              help="Scenario-level parallelism [env COMPLIFT_JOBS].")
@click.option("--mcmc-eta", default=0.05, show_default=True)
@click.option("--mcmc-steps", default=10, show_default=True)
@click.option("--filtered-method", default="naive-T1000", show_default=True,
              help="Filter column used for the aggregate deltas.")
@_guarded
def bench(scenario_arg, methods_arg, n, seed, models_dir, out, jobs,
          mcmc_eta, mcmc_steps, filtered_method):
    """Run methods across scenarios and tabulate the comparison.

    Writes results.csv, per-scenario score histograms, separation.csv
    (mean composed lift for members and non-members), and deltas.csv
    (mean accuracy improvement over the unfiltered baseline, in points).
    """
    if scenario_arg.strip() == "all":
        sids = sorted(SCENARIOS)
    else:
        sids = [s.strip() for s in scenario_arg.split(",") if s.strip()]
        unknown = [s for s in sids if s not in SCENARIOS]
        if unknown:
            raise click.UsageError(f"unknown scenarios {unknown}")
    methods = tuple(m.strip() for m in methods_arg.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise click.UsageError(f"unknown methods {unknown}; "
                               f"choose from {', '.join(METHODS)}")
    if jobs is None:
        jobs = int(os.environ.get("COMPLIFT_JOBS", "1"))
    for sid in sids:  # fail on missing checkpoints before any work
        _load_models(models_dir, SCENARIOS[sid].conditions)
    mcmc_kwargs = {"eta": mcmc_eta, "steps_per_level": mcmc_steps}

    if jobs > 1 and len(sids) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {sid: pool.submit(_bench_worker, sid, models_dir,
                                        methods, n, seed, mcmc_kwargs)
                       for sid in sids}
            results = {sid: futures[sid].result() for sid in sids}
    else:
        results = {sid: _bench_worker(sid, models_dir, methods, n, seed,
                                      mcmc_kwargs)
                   for sid in sids}

    out_dir = _out_dir(out)
    rows = []
    sep_rows = []
    for sid in sids:
        res = results[sid]
        for r in res.rows:
            rows.append((r.scenario, r.method, r.n, r.accepted, r.accuracy,
                         r.chamfer, r.ratio, r.wall_ms, r.seed))
        if res.scores is not None:
            table = histogram_table(res.scores, res.member)
            _write_csv(out_dir / f"histogram_{sid}.csv",
                       ("bin_lo", "bin_hi", "member", "non_member"),
                       zip(table["bin_lo"], table["bin_hi"],
                           table["member"], table["non_member"]))
            sep = mean_separation(res.scores, res.member)
            if sep is not None:
                sep_rows.append((sid, sep[0], sep[1]))
    _write_csv(out_dir / "results.csv", _RESULT_HEADER, rows)
    _write_csv(out_dir / "separation.csv",
               ("scenario", "mean_member", "mean_non_member"), sep_rows)
    deltas = aggregate_deltas(results, filtered_method=filtered_method)
    _write_csv(out_dir / "deltas.csv", ("kind", "delta_points"),
               sorted(deltas.items()))
    _write_manifest(out_dir, "bench", {
        "scenarios": sids, "methods": list(methods), "n": n, "seed": seed,
        "models": models_dir, "jobs": jobs, "mcmc_eta": mcmc_eta,
        "mcmc_steps": mcmc_steps, "filtered_method": filtered_method})
    click.echo(f"wrote {len(rows)} result rows to {out_dir / 'results.csv'}")


@main.command()
@click.option("--mode", required=True, type=click.Choice(("noise", "timestep")))
@click.option("--scenario", "scenario_id", required=True,
              type=click.Choice(sorted(SCENARIOS)))
@click.option("--trials-grid", default=",".join(str(t) for t in TRIALS_GRID),
              show_default=True)
@click.option("--n", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--models", "models_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def ablate_cmd(mode, scenario_id, trials_grid, n, seed, models_dir, out):
    """Sweep estimator settings (noise strategies or timestep selection)
    against trial count on one scenario."""
    grid = _parse_grid(trials_grid)
    scenario = SCENARIOS[scenario_id]
    models = _load_models(models_dir, scenario.conditions)
    rows = ablate(scenario, models, mode, trials_grid=grid, n=n, seed=seed,
                  log=click.echo)
    out_dir = _out_dir(out)
    _write_csv(out_dir / "ablation.csv",
               ("scenario", "mode", "strategy", "trials", "accuracy",
                "ratio", "seed"),
               [(r.scenario, r.mode, r.strategy, r.trials, r.accuracy,
                 r.ratio, r.seed) for r in rows])
    _write_manifest(out_dir, "ablate", {
        "mode": mode, "scenario": scenario_id, "trials_grid": list(grid),
        "n": n, "seed": seed})
    click.echo(f"wrote {len(rows)} ablation rows")


@main.command()
@click.option("--cache", "cache_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--expr", default=None,
              help="Composition over recorded conditions or their condN "
                   "aliases; defaults to the conjunction of all conditions.")
@click.option("--tau", default=DEFAULT_TAU, show_default=True,
              help="Pixel count a condition must clear to pass.")
@click.option("--mode", default="composed", show_default=True,
              type=click.Choice(LIFT_MODES))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_guarded
def pixellift(cache_dir, expr, tau, mode, out):
    """Per-pixel lift verdict for a recorded latent trajectory.

    Writes counts.csv (per-condition activated-pixel counts), verdict.csv,
    and one heatmap_*.csv grid per condition for rendering.
    """
    cache = read_cache(cache_dir)
    names = [f"cond{k}" for k in range(len(cache.conditions))]
    if expr is None:
        expr = " & ".join(names)
    cnf = algebra.to_cnf(algebra.parse(expr))
    verdict = verdict_for_prompt(cache, cnf, tau=tau, mode=mode)
    out_dir = _out_dir(out)
    alias = {f"cond{k}": c for k, c in enumerate(cache.conditions)}
    _write_csv(out_dir / "counts.csv", ("condition", "prompt", "count", "lift"),
               [(name, alias.get(name, name), verdict.counts[name],
                 verdict.lifts[name]) for name in verdict.counts])
    _write_csv(out_dir / "verdict.csv", ("key", "value"),
               [("accept", verdict.accept), ("tau", tau), ("mode", mode),
                ("expr", expr)])
    for name, grid in verdict.maps.items():
        np.savetxt(out_dir / f"heatmap_{_slug(name)}.csv",
                   np.atleast_2d(grid), delimiter=",")
    _write_manifest(out_dir, "pixellift", {
        "cache": cache_dir, "expr": expr, "tau": tau, "mode": mode})
    click.echo("accept" if verdict.accept else "reject")


@main.command("report")
@click.option("--dir", "directory", required=True,
              type=click.Path(exists=True, file_okay=False))
@_guarded
def report_cmd(directory):
    """Render figures for every recognized CSV in a run directory."""
    written = report.render_all(directory)
    for path in written:
        click.echo(f"wrote {path}")
    if not written:
        click.echo("nothing to render")


if __name__ == "__main__":
    main()
