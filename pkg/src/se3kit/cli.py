"""Command-line front end.

Subcommands:
  run           execute a YAML scenario config (closed-loop tasks, or the
                offline filter_study / fusion_bench / gen_dataset tasks)
  filter-study  dynamics-noise sweep without a config file
  fusion-bench  timing and convergence profile of on-manifold fusion
  gen-dataset   sample contact poses and twist labels to CSV
  validate      check a config and echo the resolved scenario, writing
                nothing

Exit codes: 0 success, 2 configuration error (nothing is written),
3 divergence during simulation.  Output locations default to --out-dir,
then the SE3KIT_OUT_DIR environment variable, then the working directory.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import difflib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import filtering, sim, uncertainty
from .errors import ConfigError, DivergenceError
from .gdnmath import SampleSpec, label_pipeline, sample_contact_pose
from .liegroup import exp, log

_CLOSED_LOOP = ("track", "follow", "push_single", "push_dual")
_ALL_TASKS = _CLOSED_LOOP + ("filter_study", "fusion_bench", "gen_dataset")

_DEFAULT_SIGMA_GRID = (10.0, 1.0, 0.1, 0.01, math.inf)


# --------------------------------------------------------------------------
# Config loading and validation


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_number(v):
    return _is_number(v)


def _check_positive(v):
    return _is_number(v) and v > 0


def _check_nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _check_positive_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _check_bool(v):
    return isinstance(v, bool)


def _check_std6(v):
    return (isinstance(v, list) and len(v) == 6
            and all(_is_number(x) and x > 0 for x in v))


def _check_sigma_grid(v):
    return (isinstance(v, list) and len(v) >= 1
            and all(_is_number(x) and (x >= 0 or math.isinf(x)) for x in v))


def _check_track_profile(v):
    return v in ("periodic", "segments", "static")


def _check_surface(v):
    return v in ("flat", "ramp", "hemisphere")


# key -> (validator, human description of the expected value)
_KEY_SPECS = {
    "task": (lambda v: v in _ALL_TASKS, f"one of {', '.join(_ALL_TASKS)}"),
    "seed": (_check_nonneg_int, "a non-negative integer"),
    "trials": (_check_positive_int, "a positive integer"),
    "duration": (_check_positive, "a positive number of seconds"),
    "dt": (_check_positive, "a positive number of seconds"),
    "observation_std": (_check_std6, "a list of 6 positive numbers"),
    "observation_multiplier": (_check_positive, "a positive number"),
    "dynamics_sigma": (_check_positive, "a positive number"),
    "track_profile": (_check_track_profile, "periodic, segments, or static"),
    "surface": (_check_surface, "flat, ramp, or hemisphere"),
    "surface_radius": (_check_positive, "a positive radius in mm"),
    "follow_speed": (_check_positive, "a positive speed in mm/s"),
    "object_alpha": (lambda v: _is_number(v) and 0 < v <= 1, "a number in (0, 1]"),
    "object_r0": (_check_positive, "a positive distance in mm"),
    "tall": (_check_bool, "true or false"),
    "start_y": (_check_number, "a number in mm"),
    "start_z": (_check_number, "a number in mm"),
    "target_y": (_check_number, "a number in mm"),
    "target_z": (_check_number, "a number in mm"),
    "switch_off_radius": (_check_positive, "a positive radius in mm"),
    "termination_radius": (_check_positive, "a positive radius in mm"),
    "steps": (_check_positive_int, "a positive integer"),
    "sigma_grid": (_check_sigma_grid, "a list of non-negative numbers (or .inf)"),
    "samples": (_check_positive_int, "a positive integer"),
}

_COMMON_KEYS = {"task", "seed", "trials"}
_LOOP_KEYS = {"duration", "dt", "observation_std", "observation_multiplier",
              "dynamics_sigma"}
_TASK_KEYS = {
    "track": _LOOP_KEYS | {"track_profile"},
    "follow": _LOOP_KEYS | {"surface", "surface_radius", "follow_speed"},
    "push_single": _LOOP_KEYS | {"object_alpha", "object_r0", "tall",
                                 "start_y", "start_z", "target_y", "target_z",
                                 "switch_off_radius", "termination_radius"},
    "push_dual": _LOOP_KEYS | {"object_alpha", "object_r0", "tall",
                               "start_y", "start_z", "target_y", "target_z",
                               "switch_off_radius", "termination_radius"},
    "filter_study": {"steps", "sigma_grid"},
    "fusion_bench": set(),
    "gen_dataset": {"samples"},
}


def _key_lines(path: Path, text: str) -> dict:
    """Top-level key -> 1-based line number, via the YAML node tree."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: not valid YAML ({e.__class__.__name__})")
    if root is None:
        raise ConfigError(f"{path}: config is empty")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{path}:1: config must be a mapping of keys to values")
    lines = {}
    for key_node, _ in root.value:
        lines[key_node.value] = key_node.start_mark.line + 1
    return lines


def load_config(path) -> dict:
    """Parse and validate a scenario config; raises ConfigError.

    The returned dict is exactly the file's content (no defaults filled
    in); resolution against defaults happens when the scenario is built.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})")
    lines = _key_lines(path, text)
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a mapping of keys to values")

    def where(key):
        return f"{path}:{lines.get(key, 1)}"

    task = data.get("task")
    if task is None:
        raise ConfigError(f"{path}:1: missing required key 'task'")
    ok, expect = _KEY_SPECS["task"]
    if not ok(task):
        raise ConfigError(f"{where('task')}: task must be {expect}, got {task!r}")

    allowed = _COMMON_KEYS | _TASK_KEYS[task]
    for key, value in data.items():
        if key not in allowed:
            hint = ""
            near = difflib.get_close_matches(key, sorted(allowed), n=1)
            if near:
                hint = f" (did you mean '{near[0]}'?)"
            elif key in _KEY_SPECS:
                hint = f" (not valid for task '{task}')"
            raise ConfigError(f"{where(key)}: unknown key '{key}'{hint}")
        check, expect = _KEY_SPECS[key]
        if not check(value):
            raise ConfigError(
                f"{where(key)}: '{key}' must be {expect}, got {value!r}")
    if task in _CLOSED_LOOP and "duration" not in data:
        raise ConfigError(f"{path}:1: task '{task}' requires 'duration'")
    return data


def _build_scenario(config: dict, seed: int, dt_override=None) -> sim.Scenario:
    fields = {k: v for k, v in config.items()
              if k not in ("trials", "seed", "steps", "sigma_grid", "samples")}
    fields["seed"] = seed
    if dt_override is not None:
        fields["dt"] = dt_override
    if "observation_std" in fields:
        fields["observation_std"] = np.asarray(fields["observation_std"], dtype=float)
    try:
        return sim.Scenario(**fields)
    except ValueError as e:
        raise ConfigError(str(e))


# --------------------------------------------------------------------------
# Offline routines


def _run_filter_study(steps: int, sigma_grid, seed: int, out_dir: Path, quiet: bool):
    rng = np.random.default_rng(seed)
    pairs = sim.make_study_sequence(steps, rng)
    table = filtering.filter_study(pairs, sigma_grid, seed=seed)
    out = out_dir / "filter_study.csv"
    filtering.write_study_csv(table, out)
    if not quiet:
        print(f"filter study: {steps} steps, seed {seed}")
        for sigma, mae in table.items():
            label = "inf" if math.isinf(sigma) else f"{sigma:g}"
            print(f"  sigma_psi={label:>6}  MAE "
                  + " ".join(f"{m:.4f}" for m in mae))
        print(f"wrote {out}")
    return 0


def _random_concentrated_pair(rng):
    def spd():
        a = rng.standard_normal((6, 6))
        q, _ = np.linalg.qr(a)
        return q @ np.diag(rng.uniform(0.01, 0.5, 6)) @ q.T

    base = exp(np.concatenate([rng.uniform(-50, 50, 3), rng.uniform(-0.5, 0.5, 3)]))
    offset = exp(0.2 * rng.standard_normal(6))
    return (uncertainty.PoseGaussian(base, spd()),
            uncertainty.PoseGaussian(offset @ base, spd()))


def _run_fusion_bench(trials: int, seed: int, out_dir: Path, quiet: bool):
    rng = np.random.default_rng(seed)
    pairs = [_random_concentrated_pair(rng) for _ in range(trials)]
    t0 = time.perf_counter()
    results = [uncertainty.fuse(a, b) for a, b in pairs]
    elapsed = time.perf_counter() - t0

    # Convergence profile, measured from outside: the first iteration
    # budget whose fused mean matches the next one's to 1e-10.
    histogram = {str(k): 0 for k in range(1, 6)}
    for (a, b), full in zip(pairs, results):
        needed = 5
        prev = None
        for k in range(1, 6):
            mean_k = uncertainty.fuse(a, b, iterations=k).mean
            if prev is not None and np.linalg.norm(
                    log(mean_k @ prev.inverse()).vector) < 1e-10:
                needed = k - 1
                break
            prev = mean_k
        histogram[str(needed)] += 1

    out = out_dir / "fusion_bench.json"
    payload = {"trials": trials, "seed": seed, "iteration_histogram": histogram}
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not quiet:
        per = elapsed / max(trials, 1) * 1e6
        print(f"fusion bench: {trials} fusions in {elapsed:.3f} s "
              f"({per:.1f} us each)")
        print("iterations to converge: "
              + ", ".join(f"{k}: {v}" for k, v in sorted(histogram.items())))
        print(f"wrote {out}")
    return 0


def _run_gen_dataset(samples: int, seed: int, out_dir: Path, quiet: bool):
    rng = np.random.default_rng(seed)
    spec = SampleSpec()
    out = out_dir / "dataset.csv"
    with open(out, "w", newline="") as fh:
        fh.write("x,y,z,alpha,beta,gamma,xi_0,xi_1,xi_2,xi_3,xi_4,xi_5\n")
        for _ in range(samples):
            euler = sample_contact_pose(spec, rng)
            xi = label_pipeline(euler).vector
            row = list(euler) + list(xi)
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if not quiet:
        print(f"wrote {samples} samples to {out}")
    return 0


# --------------------------------------------------------------------------
# Scenario trials


def _aggregate(per_trial: list) -> dict:
    """mean and std (ddof=0) of every numeric metric shared by all trials."""
    summary = {}
    keys = set(per_trial[0]) - {"trial", "seed"}
    for m in per_trial[1:]:
        keys &= set(m)
    for key in sorted(keys):
        values = [m[key] for m in per_trial]
        if all(_is_number(v) for v in values):
            arr = np.array(values, dtype=float)
            summary[key] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return summary


def _run_trials(config: dict, stem: str, seed: int, trials: int,
                dt_override, out_dir: Path, quiet: bool) -> int:
    scenarios = [_build_scenario(config, seed + i, dt_override)
                 for i in range(trials)]

    def one(scn):
        rng = np.random.Generator(np.random.PCG64(scn.seed))
        return sim.run_scenario(scn, rng)

    results = []
    with concurrent.futures.ThreadPoolExecutor(
            max_workers=min(trials, os.cpu_count() or 1)) as pool:
        futures = [pool.submit(one, scn) for scn in scenarios]
        for fut in futures:
            results.append(fut.result())

    per_trial = []
    for i, (traj, metrics) in enumerate(results):
        traj.write_csv(out_dir / f"{stem}_trial{i}.csv")
        metrics = dict(metrics, trial=i, seed=seed + i)
        sim.write_metrics_json(metrics, out_dir / f"{stem}_trial{i}_metrics.json")
        per_trial.append(metrics)
        if not quiet:
            shown = {k: v for k, v in metrics.items()
                     if k not in ("task", "trial") and v is not None}
            print(f"trial {i}: " + ", ".join(
                f"{k}={v:.4g}" if _is_number(v) else f"{k}={v}"
                for k, v in sorted(shown.items())))

    summary = {"task": config["task"], "trials": trials, "seed": seed,
               "metrics": _aggregate(per_trial)}
    sim.write_metrics_json(summary, out_dir / f"{stem}_summary.json")
    if not quiet:
        for key, stats in summary["metrics"].items():
            print(f"{key}: {stats['mean']:.6g} +/- {stats['std']:.6g}")
        print(f"wrote {trials} trial logs and {stem}_summary.json to {out_dir}")
    return 0


# --------------------------------------------------------------------------
# Entry points


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None,
                   help="override the base random seed")
    p.add_argument("--out-dir", default=None,
                   help="output directory (default: $SE3KIT_OUT_DIR or '.')")
    p.add_argument("--quiet", action="store_true", help="suppress stdout chatter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="se3kit",
        description="closed-loop tactile servoing scenarios and supporting "
                    "estimation benchmarks (units: mm, rad, s)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a YAML scenario config")
    p_run.add_argument("config", help="scenario config file")
    p_run.add_argument("--trials", type=int, default=None,
                       help="override the number of trials")
    p_run.add_argument("--dt", type=float, default=None,
                       help="override the control period in seconds")
    _add_common(p_run)

    p_study = sub.add_parser("filter-study", help="dynamics-noise sweep")
    p_study.add_argument("--steps", type=int, default=2000)
    _add_common(p_study)

    p_bench = sub.add_parser("fusion-bench", help="fusion timing and convergence")
    p_bench.add_argument("--trials", type=int, default=200)
    _add_common(p_bench)

    p_data = sub.add_parser("gen-dataset", help="sample contact poses to CSV")
    p_data.add_argument("--samples", type=int, default=1000)
    _add_common(p_data)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config", help="scenario config file")
    return parser


def _resolve_out_dir(arg) -> Path:
    out = Path(arg if arg is not None else os.environ.get("SE3KIT_OUT_DIR", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


_PRESETS_IN_PLAY = {
    "track": ("tracking",),
    "follow": ("surface_follow",),
    "push_single": ("push_pid1", "push_pid2_single"),
    "push_dual": ("push_pid1", "push_pid2_dual", "stabiliser"),
}


def _validate_cmd(config_path) -> int:
    config = load_config(config_path)
    task = config["task"]
    print(f"{config_path}: ok")
    print(f"task: {task} (units: mm, rad, s)")
    if task in _CLOSED_LOOP:
        seed = config.get("seed", 0)
        scn = _build_scenario(config, seed)
        presets = _PRESETS_IN_PLAY[task]
        if task == "push_dual" and config.get("tall", False):
            presets = ("push_tall", "push_pid2_dual", "stabiliser_tall")
        print(f"duration: {scn.duration} s at dt={scn.dt:.6g} s "
              f"({int(round(scn.duration / scn.dt))} steps)")
        print(f"controller presets: {', '.join(presets)}")
        if task.startswith("push"):
            print(f"alignment switch-off radius: {scn.switch_off_radius:g} mm, "
                  f"termination radius: {scn.termination_radius:g} mm")
        print(f"trials: {config.get('trials', 1)}, base seed: {seed}")
        print("would write: per-trial trajectory CSV, per-trial metrics JSON, "
              "summary JSON")
    elif task == "filter_study":
        print(f"steps: {config.get('steps', 2000)}, "
              f"sigma grid: {config.get('sigma_grid', list(_DEFAULT_SIGMA_GRID))}")
        print("would write: filter_study.csv")
    elif task == "fusion_bench":
        print(f"trials: {config.get('trials', 200)}")
        print("would write: fusion_bench.json")
    else:
        print(f"samples: {config.get('samples', 1000)}")
        print("would write: dataset.csv")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return _validate_cmd(args.config)

        # For config-driven runs, validate before touching the filesystem.
        config = None
        if args.command == "run":
            config = load_config(args.config)
        out_dir = _resolve_out_dir(args.out_dir)
        quiet = args.quiet
        if args.command == "filter-study":
            seed = args.seed if args.seed is not None else 0
            return _run_filter_study(args.steps, _DEFAULT_SIGMA_GRID, seed,
                                     out_dir, quiet)
        if args.command == "fusion-bench":
            seed = args.seed if args.seed is not None else 0
            return _run_fusion_bench(args.trials, seed, out_dir, quiet)
        if args.command == "gen-dataset":
            seed = args.seed if args.seed is not None else 0
            return _run_gen_dataset(args.samples, seed, out_dir, quiet)

        # run
        task = config["task"]
        seed = args.seed if args.seed is not None else config.get("seed", 0)
        if task == "filter_study":
            return _run_filter_study(config.get("steps", 2000),
                                     config.get("sigma_grid", _DEFAULT_SIGMA_GRID),
                                     seed, out_dir, quiet)
        if task == "fusion_bench":
            return _run_fusion_bench(config.get("trials", 200), seed, out_dir, quiet)
        if task == "gen_dataset":
            return _run_gen_dataset(config.get("samples", 1000), seed, out_dir, quiet)
        trials = args.trials if args.trials is not None else config.get("trials", 1)
        if trials < 1:
            raise ConfigError("trials must be at least 1")
        stem = Path(args.config).stem
        return _run_trials(config, stem, seed, trials, args.dt, out_dir, quiet)
    except ConfigError as e:
        print(f"se3kit: config error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"se3kit: diverged: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
