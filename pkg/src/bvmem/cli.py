"""Command-line entry point: ``bvmem {simulate,fit,evaluate,diagnose}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as bio
from .baseline import ln1_draws, ln1_map
from .evaluation import (
    DensityGrid,
    MeanCache,
    acf,
    default_axis,
    draw_log_densities,
    ess,
    joint_density_grid,
    lpml,
    lps,
    marginal_density_grid,
    mixture_marginal_density,
    summarize,
)
from .sampler import fit_dpm
from .vmem import MeanParams, reference_design, simulate

logger = logging.getLogger("bvmem")

INVALID = "INVALID"
ACF_LAGS = 200


def chain_seeds(seed: int, chains: int) -> list:
    """Independent integer seeds for each chain; a single chain keeps ``seed`` itself."""
    if chains == 1:
        return [seed]
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(chains)]


def cmd_simulate(cfg: bio.RunConfig):
    params, innov = reference_design()
    series, _, mu1 = simulate(params, innov, cfg.T, rng=cfg.seed, return_innovations=True)
    bio.write_series(cfg.output / "series.csv", series)
    truth = {
        "names": MeanParams.names(params.dim),
        "eta": params.to_vector().tolist(),
        "mu1": np.asarray(mu1).tolist(),
        "weights": innov.weights.tolist(),
        "locations": [c.location.tolist() for c in innov.components],
        "scales": [c.scale.tolist() for c in innov.components],
        "seed": cfg.seed,
        "T": cfg.T,
    }
    (cfg.output / "truth.json").write_text(json.dumps(truth, indent=2))


def _load(cfg):
    return np.asarray(bio.load_series(cfg.data_path, cfg.columns, cfg.annualize), dtype=float)


def _write_fit_report(path, report):
    bio.write_table(path, ["param", "mean", "lower", "upper", "ess"], report.rows())
    with Path(path).open("a") as fh:
        fh.write(f"# lps,{bio.FLOAT_FMT % report.lps}\n# lpml,{bio.FLOAT_FMT % report.lpml}\n")


def _data_header(cfg, x):
    head = {"d": x.shape[1], "T": x.shape[0], "config_hash": bio.config_hash(cfg), "seed": cfg.seed}
    if cfg.annualize:
        head["annualization"] = f"100*sqrt(252) = {bio.ANNUALIZATION:.15g}"
    return head


def cmd_fit_dpm(cfg: bio.RunConfig):
    x = _load(cfg)
    draws, active, inst, acc = [], [], [], []
    for s in chain_seeds(cfg.seed, cfg.chains):
        fit = fit_dpm(x, replace(cfg.sampler, seed=s))
        draws += fit.draws
        active.append(fit.n_active.tolist())
        inst.append(fit.n_instantiated.tolist())
        acc.append(fit.acceptance_rate)
        logger.info("chain seed %d: acceptance %.3f, %d draws", s, fit.acceptance_rate, len(fit.draws))
    header = {
        "model": "dpm",
        **_data_header(cfg, x),
        "chains": cfg.chains,
        "acceptance": acc,
        "n_active": active,
        "n_instantiated": inst,
    }
    bio.write_archive(cfg.output / "draws.bin", draws, header)
    _write_fit_report(cfg.output / f"report_{header['model']}.csv", summarize(draws, x))


def cmd_fit_ln1(cfg: bio.RunConfig):
    x = _load(cfg)
    s = cfg.sampler
    fit = ln1_map(x, eta_prior_variance=s.eta_prior_variance, hyper=s.hyper(x.shape[1]),
                  n_starts=cfg.ln1_starts, seed=cfg.seed)
    out = {
        "names": MeanParams.names(x.shape[1]),
        "eta": fit.eta.to_vector().tolist(),
        "std_errors": fit.std_errors.tolist(),
        "sigma": fit.sigma.tolist(),
        "log_posterior": fit.log_posterior,
        "mu1": fit.mu1.tolist(),
    }
    (cfg.output / "ln1.json").write_text(json.dumps(out, indent=2))
    draws = ln1_draws(fit, cfg.ln1_draws, rng=cfg.seed)
    header = {"model": "ln1", **_data_header(cfg, x), "mode_draw": bio.draw_to_record(fit.as_draw()).tolist()}
    bio.write_archive(cfg.output / "ln1_draws.bin", draws, header)
    _write_fit_report(cfg.output / f"report_{header['model']}.csv", summarize(draws, x))


def _open_archive(cfg, key):
    header, draws = bio.read_archive(cfg.archives[key])
    expected = bio.config_hash(cfg)
    if header.get("config_hash") != expected:
        raise bio.ConfigError(
            f"archive {cfg.archives[key]} was written under config hash {header.get('config_hash')}, "
            f"this config hashes to {expected}; refusing to mix them"
        )
    return header, draws


def cmd_evaluate(cfg: bio.RunConfig):
    x = _load(cfg)
    d = x.shape[1]
    axis = default_axis(cfg.grid_points)
    rows = []
    cache = MeanCache(x)
    for key in sorted(cfg.archives):
        _, draws = _open_archive(cfg, key)
        L = draw_log_densities(draws, x, cache)
        rows.append((key, lps(draws, x, log_dens=L), lpml(draws, x, log_dens=L), len(draws)))
        for i in range(d):
            bio.write_grid(cfg.output / f"grid_{key}_{i + 1}.csv", marginal_density_grid(draws, i, axis))
        if d == 2:
            bio.write_grid(cfg.output / f"grid_{key}_joint.csv", joint_density_grid(draws))
    bio.write_table(cfg.output / "report.csv", ["model", "lps", "lpml", "draws"], rows)
    with (cfg.output / "report.csv").open("a") as fh:
        fh.write("# lps = -mean_t log mean_n f(x_t|draw n); lpml = -mean_t log CPO_t (harmonic mean); lower is better\n")
    if cfg.truth is not None:
        truth = json.loads(Path(cfg.truth).read_text())
        for i in range(d):
            vals = mixture_marginal_density(axis, truth["weights"], truth["locations"], truth["scales"], i)
            bio.write_grid(cfg.output / f"grid_true_{i + 1}.csv", DensityGrid(f"true_{i + 1}", (axis,), vals))


def cmd_diagnose(cfg: bio.RunConfig):
    key = "dpm" if "dpm" in cfg.archives else sorted(cfg.archives)[0]
    header, draws = bio.read_archive(cfg.archives[key])
    eta = np.array([dr.eta.to_vector() for dr in draws])
    names = MeanParams.names(draws[0].eta.dim)
    for j, name in enumerate(names):
        bio.write_table(cfg.output / f"trace_{name}.csv", ["draw", "value"], zip(range(eta.shape[0]), eta[:, j]))
    lags = min(ACF_LAGS, eta.shape[0] - 1)
    acfs = np.column_stack([acf(col, lags) for col in eta.T])
    bio.write_table(cfg.output / "acf.csv", ["lag", *names], ([k, *acfs[k]] for k in range(lags + 1)))
    bio.write_table(cfg.output / "ess.csv", ["param", "ess"], ((n, ess(col)) for n, col in zip(names, eta.T)))
    rows = []
    for c, (act, inst) in enumerate(zip(header.get("n_active", []), header.get("n_instantiated", []))):
        rows += [(c + 1, it + 1, a, n) for it, (a, n) in enumerate(zip(act, inst))]
    bio.write_table(cfg.output / "components.csv", ["chain", "iteration", "active", "instantiated"], rows)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-dpm": cmd_fit_dpm,
    "fit-ln1": cmd_fit_ln1,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="bvmem", description="Bayesian semiparametric vector MEM")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "evaluate", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--output", type=Path)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            p.add_argument("--model", choices=("dpm", "ln1"), default="dpm")
    return parser


def _origin(exc) -> str:
    """Module of the innermost package frame that raised ``exc``."""
    module = "bvmem"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = Path(frame.filename).parts
        if "bvmem" in parts:
            module = "bvmem." + Path(frame.filename).stem
    return module


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    mode = f"fit-{args.model}" if args.command == "fit" else args.command
    try:
        cfg = bio.load_config(args.config, mode, seed=args.seed, output=args.output)
    except (bio.ConfigError, ValueError) as exc:
        print(f"bvmem.io: {exc}", file=sys.stderr)
        return 2
    cfg.output.mkdir(parents=True, exist_ok=True)
    marker = cfg.output / INVALID
    marker.write_text(f"{mode} started; incomplete until this file is removed\n")
    try:
        COMMANDS[mode](cfg)
    except Exception as exc:  # surfaced with the raising module, outputs stay marked
        msg = f"{_origin(exc)}: {type(exc).__name__}: {exc}"
        marker.write_text(msg + "\n")
        print(msg, file=sys.stderr)
        return 1
    marker.unlink()
    return 0


if __name__ == "__main__":
    sys.exit(main())
