"""Command line front end: one subcommand per experiment stage.

Every subcommand takes the same four global flags (--config, --seed,
--out-dir, --threads), writes its artifacts into the output directory,
and finishes by writing run_manifest.json recording the resolved config
hash and seed so a rerun can be checked for equality.

Exit codes: 0 success, 1 usage error, 2 config/checkpoint error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import importlib.metadata
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import (
    TissueTaskConfig,
    generate_cohort,
    lipschitz_report,
    noise_partition,
    rule_map,
    rules_sweep,
    summarize_sweep,
    write_sweep_csv,
)
from .checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, config_as_dict, config_digest, parse_config
from .images import (
    ingest_image,
    render_gray,
    render_rgba,
    render_tissue,
    save_png,
    synthetic_target,
)
from .inference import PriorSpec, abc_run
from .metrics import evaluate_cohorts, type_proportions, write_metric_csv
from .model import AutomatonModel, StepOptions, rollout
from .perturb import Perturbation, recovery_experiment, write_curve_csv, write_recovery_csv
from .rng import RngStream
from .tensor import NumericalDivergenceError, Tensor
from .tissue import TYPE_NAMES, load_cohort, one_hot, one_hot_sequence, run_cohort, save_cohort
from .tissue import default_params, minimal_params
from .training import TrainConfig, make_seed_state, train_pool, train_timeseries, write_loss_log

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

# purposes for deriving independent integer seeds from the run seed
_U_MODEL, _U_TRAIN, _U_DATA, _U_EVAL, _U_RUN = 0, 1, 2, 3, 4

try:
    _VERSION = importlib.metadata.version("mncalab")
except importlib.metadata.PackageNotFoundError:
    _VERSION = "0.0.0"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sub_seed(seed: int, purpose: int) -> int:
    """Independent integer seed per purpose; the run seed itself is never
    handed to library code, so command-level draws cannot alias."""
    return int(RngStream(seed).at(_U_RUN, purpose).integers(0, 2**31 - 2))


def _stream(seed: int, purpose: int) -> RngStream:
    return RngStream(_sub_seed(seed, purpose))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mncalab", description="mixture-automaton experiments")
    parser.add_argument("--version", action="version", version=_VERSION)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None,
                       help="run seed; overrides the config, recorded in the manifest")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default runs/{name})")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for the parallel stages")
        return p

    add("simulate-tissue", "generate a growth cohort plus summary outputs")
    add("train", "fit a model (sequence task with a tissue block, image task otherwise)")

    p = add("evaluate", "score a trained model against an observed cohort")
    p.add_argument("--checkpoint", required=True, help="trained model file")
    p.add_argument("--cohort", default=None,
                   help="observed cohort file; simulated from the config when absent")

    p = add("perturb", "damage-recovery curves for a trained model")
    p.add_argument("--checkpoint", required=True)

    add("abc", "rejection posterior over growth-simulator parameters")

    p = add("analyze", "rule maps, contraction bounds and the noise partition")
    p.add_argument("--checkpoint", required=True)

    add("sweep-rules", "KL divergence as a function of the rule count")

    p = add("steer", "roll out with per-rule probability multipliers")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--multipliers", required=True,
                   help="comma-separated nonnegative multipliers, one per rule")
    p.add_argument("--steps", type=int, default=100, help="rollout length")
    return parser


# -- small shared pieces ------------------------------------------------------


def _need(cfg: ExperimentConfig, name: str):
    block = getattr(cfg, name)
    if block is None:
        raise ConfigError(f"this subcommand needs a {name} block", field=name)
    return block


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from e


def _tissue_params(cfg: ExperimentConfig):
    block = cfg.tissue
    base = default_params() if block.params == "default" else minimal_params()
    return replace(base, grid_size=block.grid_size, n_steps=block.n_steps)


def _load_target(block) -> np.ndarray:
    if block.target == "synthetic":
        t = synthetic_target(block.target_size)
        if block.pad_px:
            pp = block.pad_px
            t = np.pad(t, ((0, 0), (pp, pp), (pp, pp)),
                       constant_values=np.float32(block.pad_value))
        return t
    try:
        return ingest_image(block.target, block.target_size, block.pad_px,
                            block.pad_value).data
    except OSError as e:
        raise ConfigError(str(e), field="image.target") from e


def _pad_state(x: np.ndarray, channels: int) -> np.ndarray:
    c = x.shape[0]
    if c > channels:
        raise ConfigError(f"checkpoint has {channels} channels, state needs {c}")
    if c == channels:
        return x
    pad = np.zeros((channels - c, *x.shape[1:]), dtype=np.float32)
    return np.concatenate([x, pad], axis=0)


def _train_config(cfg: ExperimentConfig, seed: int, **extra) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                       milestones=cfg.milestones, gamma=cfg.gamma,
                       seed=_sub_seed(seed, _U_TRAIN), **extra)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        for row in rows:
            wr.writerow(row)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_proportions_csv(path, props):
    _write_rows(path, ["type", "proportion"],
                [(TYPE_NAMES[i + 1], _fmt(p)) for i, p in enumerate(props)])


# -- subcommands --------------------------------------------------------------


def cmd_simulate_tissue(args, cfg, seed, out):
    block = _need(cfg, "tissue")
    cohort = run_cohort(_tissue_params(cfg), block.n_realizations, _stream(seed, _U_DATA))
    save_cohort(out / "cohort.bin", cohort)
    save_png(out / "final_grid.png", render_tissue(cohort.grids[0, -1]))
    _write_proportions_csv(out / "proportions.csv", type_proportions(cohort.grids[:, -1]))
    return ["cohort.bin", "final_grid.png", "proportions.csv"]


def cmd_train(args, cfg, seed, out):
    model = AutomatonModel.create(cfg.variant, cfg.channels, cfg.hidden_dim,
                                  n_rules=cfg.rules, residual=cfg.residual,
                                  dropout=cfg.dropout, rng=_stream(seed, _U_MODEL))
    if cfg.tissue is not None:
        block = cfg.tissue
        if cfg.channels < 6:
            raise ConfigError("growth sequences need >= 6 channels", field="channels")
        cohort = run_cohort(_tissue_params(cfg), block.n_realizations, _stream(seed, _U_DATA))
        sequences = [one_hot_sequence(cohort.grids[r]) for r in range(block.n_realizations)]
        tc = _train_config(cfg, seed, batch_size=block.batch_size,
                           window=block.window, tau=block.tau)
        model, log = train_timeseries(model, sequences, tc)
    elif cfg.image is not None:
        block = cfg.image
        target = _load_target(block)
        tc = _train_config(cfg, seed, batch_size=block.batch_size,
                           pool_size=block.pool_size, n_min=block.n_min, n_max=block.n_max)
        h, w = target.shape[1:]
        model, log, _ = train_pool(model, target, (h // 2, w // 2), tc)
    else:
        raise ConfigError("train needs a tissue or image block")
    save_checkpoint(out / "model.ckpt", model, config=config_as_dict(cfg),
                    train_steps=cfg.epochs, seed=seed)
    write_loss_log(out / "loss.csv", log)
    return ["model.ckpt", "loss.csv"]


def cmd_evaluate(args, cfg, seed, out):
    model, _ = _load_ckpt(args.checkpoint)
    block = _need(cfg, "tissue")
    if model.channels < 6:
        raise ConfigError("checkpoint has fewer than 6 channels; not a growth model")
    if args.cohort:
        try:
            observed = load_cohort(args.cohort)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read cohort file {args.cohort}: {e}") from e
    else:
        observed = run_cohort(_tissue_params(cfg), block.n_realizations,
                              _stream(seed, _U_DATA))
    generated = generate_cohort(model, observed, observed.n_steps, _stream(seed, _U_EVAL))
    write_metric_csv(out / "metrics.csv",
                     [(model.variant, [evaluate_cohorts(observed, generated)])])
    save_png(out / "generated_grid.png", render_tissue(generated.grids[0, -1]))
    return ["metrics.csv", "generated_grid.png"]


def cmd_perturb(args, cfg, seed, out):
    model, _ = _load_ckpt(args.checkpoint)
    pb = _need(cfg, "perturb")
    ib = _need(cfg, "image")
    target = _load_target(ib)
    p = Perturbation(kind=pb.kind, side=pb.side, rho=pb.rho, count=pb.count,
                     sigma=pb.sigma, visible_only=pb.visible_only)
    h, w = target.shape[1:]
    x0 = make_seed_state(model.channels, h, w, (h // 2, w // 2))
    states, _ = rollout(model, x0, pb.grow_steps, StepOptions(), _stream(seed, _U_DATA))
    try:
        res = recovery_experiment(model, states[-1], target, p, _stream(seed, _U_RUN),
                                  repeats=pb.repeats, steps=pb.steps)
    except RuntimeError as e:
        # every repeat diverged; surface it as the dedicated exit code
        raise NumericalDivergenceError(str(e)) from e
    write_recovery_csv(out / "recovery.csv", [(model.variant, p.label(), res)])
    write_curve_csv(out / "curve.csv", res)
    return ["recovery.csv", "curve.csv"]


def cmd_abc(args, cfg, seed, out):
    ab = _need(cfg, "abc")
    _need(cfg, "tissue")
    observed = run_cohort(_tissue_params(cfg), cfg.tissue.n_realizations,
                          _stream(seed, _U_DATA))
    kwargs = dict(n_realizations=ab.n_realizations, quantile=ab.quantile,
                  trace_path=out / "particles.csv")
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            posterior, diag = abc_run(observed, PriorSpec(), ab.n_particles, ab.epsilon,
                                      ab.statistic, _stream(seed, _U_RUN),
                                      mapper=pool.map, **kwargs)
    else:
        posterior, diag = abc_run(observed, PriorSpec(), ab.n_particles, ab.epsilon,
                                  ab.statistic, _stream(seed, _U_RUN), **kwargs)
    rows = [(f"b{i}", _fmt(v)) for i, v in enumerate(posterior.b)]
    rows += [(f"d{i}", _fmt(v)) for i, v in enumerate(posterior.d)]
    rows += [(f"s{i}", _fmt(v)) for i, v in enumerate(posterior.s)]
    rows += [(f"diff_{i}_{j}", _fmt(posterior.diff[i, j]))
             for i in range(posterior.diff.shape[0]) for j in range(posterior.diff.shape[1])]
    rows += [(f"inter_{i}_{j}", _fmt(posterior.inter[i, j]))
             for i in range(posterior.inter.shape[0]) for j in range(posterior.inter.shape[1])]
    _write_rows(out / "posterior.csv", ["parameter", "value"], rows)
    summary = {"n_particles": diag.n_particles, "n_accepted": diag.n_accepted,
               "acceptance_rate": diag.acceptance_rate, "epsilon": diag.epsilon,
               "statistic": diag.kind, "min_distance": diag.min_distance}
    (out / "abc_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ["particles.csv", "posterior.csv", "abc_summary.json"]


def _reference_state(cfg, model, seed) -> Tensor:
    if cfg.tissue is not None:
        cohort = run_cohort(_tissue_params(cfg), 1, _stream(seed, _U_DATA))
        return Tensor(_pad_state(one_hot(cohort.grids[0, -1]), model.channels))
    if cfg.image is not None:
        target = _load_target(cfg.image)
        h, w = target.shape[1:]
        x0 = make_seed_state(model.channels, h, w, (h // 2, w // 2))
        states, _ = rollout(model, x0, cfg.image.n_max, StepOptions(), _stream(seed, _U_DATA))
        return states[-1]
    raise ConfigError("analyze needs a tissue or image block for the reference state")


def cmd_analyze(args, cfg, seed, out):
    model, _ = _load_ckpt(args.checkpoint)
    state = _reference_state(cfg, model, seed)
    outputs = ["lipschitz.csv"]
    rep = lipschitz_report(model, state.data)
    rows = [(f"rule{k}", _fmt(b)) for k, b in enumerate(rep.per_rule)]
    rows.append(("mixture_average", _fmt(rep.mixture_average)))
    rows.append(("perception", _fmt(rep.perception)))
    _write_rows(out / "lipschitz.csv", ["quantity", "bound"], rows)
    if model.selector is not None:
        rm = rule_map(model, state.data)
        for k in range(model.n_rules):
            name = f"rule_map_{k}.png"
            save_png(out / name, render_gray(rm.probs[k]))
            outputs.append(name)
        save_png(out / "rule_argmax.png",
                 render_gray(rm.argmax / max(model.n_rules - 1, 1)))
        outputs.append("rule_argmax.png")
    if model.has_noise:
        part = noise_partition(model, state, _stream(seed, _U_RUN))
        freqs = part.class_frequencies()
        rows = []
        for p_ix, (y, x) in enumerate(part.pixels):
            for cls in range(part.n_classes):
                sel = part.noise[part.outcome[:, p_ix] == cls, p_ix]
                mean = _fmt(sel.mean()) if sel.size else "nan"
                rows.append((y, x, cls, _fmt(freqs[p_ix, cls]), mean))
        _write_rows(out / "noise_partition.csv",
                    ["y", "x", "class", "frequency", "noise_mean"], rows)
        outputs.append("noise_partition.csv")
    return outputs


def cmd_sweep_rules(args, cfg, seed, out):
    sw = _need(cfg, "sweep")
    block = _need(cfg, "tissue")
    tc = _train_config(cfg, seed, batch_size=block.batch_size,
                       window=block.window, tau=block.tau)
    task = TissueTaskConfig(sim=_tissue_params(cfg), train=tc,
                            n_sequences=sw.n_sequences, channels=cfg.channels,
                            hidden_dim=cfg.hidden_dim, seed=_sub_seed(seed, _U_RUN))
    try:
        task.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = rules_sweep(task, sw.rule_counts, sw.repeats, mapper=pool.map)
    else:
        rows = rules_sweep(task, sw.rule_counts, sw.repeats)
    write_sweep_csv(out / "sweep.csv", rows)
    _write_rows(out / "sweep_summary.csv", ["k", "kl_mean", "kl_sd"],
                [(k, _fmt(m), _fmt(s)) for k, m, s in summarize_sweep(rows)])
    return ["sweep.csv", "sweep_summary.csv"]


def cmd_steer(args, cfg, seed, out):
    model, _ = _load_ckpt(args.checkpoint)
    if model.selector is None:
        raise ConfigError("steering needs a mixture model checkpoint")
    try:
        mult = np.array([float(v) for v in args.multipliers.split(",")], dtype=np.float64)
    except ValueError as e:
        raise UsageError(f"--multipliers must be comma-separated numbers: {e}") from e
    opts = StepOptions(steering=mult)
    try:
        opts.validate(model.n_rules)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if cfg.image is not None:
        target = _load_target(cfg.image)
        h, w = target.shape[1:]
        x0 = make_seed_state(model.channels, h, w, (h // 2, w // 2))
        states, infos = rollout(model, x0, args.steps, opts, _stream(seed, _U_RUN))
        save_png(out / "final.png", render_rgba(states[-1].data))
        usage = np.mean([inf.probs.mean(axis=(1, 2)) for inf in infos], axis=0)
        _write_rows(out / "rule_usage.csv", ["rule", "mean_prob"],
                    [(k, _fmt(u)) for k, u in enumerate(usage)])
        return ["final.png", "rule_usage.csv"]
    if cfg.tissue is not None:
        block = cfg.tissue
        if model.channels < 6:
            raise ConfigError("checkpoint has fewer than 6 channels; not a growth model")
        observed = run_cohort(_tissue_params(cfg), block.n_realizations,
                              _stream(seed, _U_DATA))
        generated = generate_cohort(model, observed, observed.n_steps,
                                    _stream(seed, _U_EVAL), opts=opts)
        save_png(out / "final_grid.png", render_tissue(generated.grids[0, -1]))
        _write_proportions_csv(out / "proportions.csv",
                               type_proportions(generated.grids[:, -1]))
        return ["final_grid.png", "proportions.csv"]
    raise ConfigError("steer needs a tissue or image block")


_COMMANDS = {
    "simulate-tissue": cmd_simulate_tissue,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "perturb": cmd_perturb,
    "abc": cmd_abc,
    "analyze": cmd_analyze,
    "sweep-rules": cmd_sweep_rules,
    "steer": cmd_steer,
}


def _write_run_manifest(out, command, cfg, seed, seed_generated, outputs):
    manifest = {
        "command": command,
        "config_sha256": config_digest(cfg),
        "seed": int(seed),
        "seed_generated": bool(seed_generated),
        "versions": {"package": _VERSION, "checkpoint_format": FORMAT_VERSION},
        "outputs": sorted(str(o) for o in outputs),
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _run(args) -> int:
    cfg = parse_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    seed_generated = seed is None
    if seed_generated:
        seed = int.from_bytes(os.urandom(4), "little")
    out = Path(args.out_dir if args.out_dir else f"runs/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    outputs = _COMMANDS[args.command](args, cfg, seed, out)
    _write_run_manifest(out, args.command, cfg, seed, seed_generated, outputs)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        return _run(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergenceError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
