"""Batch command line: synth, mask, impute, evaluate, price, sweep.

Each subcommand reads files, writes files into ``--out`` and exits 0, or
prints one diagnostic line to stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .baselines import impute_cp, impute_median
from .errors import ActTensorError, ConfigError
from .masking import apply_plan, make_plan
from .metrics import score
from .pipeline import run_act
from .pricing import build_return_tensor, fit_and_forecast, hosvd_partial_tucker, stack_factors, stepwise_select
from .pricing_metrics import pricing_scores
from .synth import density_mask, gen_lowrank_panel, gen_market_data
from .tensor import MaskedTensor

logger = logging.getLogger("act_tensor")


def _out(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config(args) -> io.ExperimentConfig:
    return io.load_config(
        args.config,
        seed=args.seed,
        method=getattr(args, "method", None),
        regime=args.regime,
        smoother=args.smoother,
    )


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: io.ExperimentConfig, out: Path) -> dict:
    """Low-rank panel, its market data and the fully observed truth."""
    truth, _ = gen_lowrank_panel(cfg.synth_t, cfg.synth_n, cfg.synth_l, cfg.synth_rank,
                                 noise_sd=cfg.synth_noise, seed=cfg.seed, normalize=cfg.normalize,
                                 smooth_months=cfg.synth_smooth)
    panel = truth
    if cfg.synth_density < 1.0:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
        panel = truth.with_mask(density_mask(truth.shape, cfg.synth_density, rng))
    market, _ = gen_market_data(truth, noise_sd=cfg.market_noise, seed=cfg.seed, size_char=cfg.size_char)
    io.write_panel(out / "panel.csv", panel)
    io.write_panel(out / "truth.csv", truth)
    io.write_market(out, market)
    stats = {"months": panel.shape[0], "firms": panel.shape[1], "characteristics": panel.shape[2],
             "density": panel.density}
    io.write_report(out / "synth_report.txt", {"panel": stats}, cfg)
    return stats


def cmd_mask(panel: MaskedTensor, cfg: io.ExperimentConfig, out: Path) -> dict:
    plan = make_plan(panel, cfg.regime, cfg.fraction, cfg.seed)
    if plan.warning:
        warnings.warn(plan.warning, stacklevel=2)
    io.write_plan(out / "plan.csv", plan, panel)
    io.write_panel(out / "masked.csv", apply_plan(panel, plan))
    stats = {"regime": plan.regime, "cells": len(plan), "fraction": plan.fraction, "seed": plan.seed}
    stats.update({k: v for k, v in plan.info.items() if np.isscalar(v)})
    io.write_report(out / "mask_report.txt", {"plan": stats}, cfg)
    return stats


def impute(panel: MaskedTensor, cfg: io.ExperimentConfig):
    """Dense completion of `panel` with the configured method, plus report text."""
    if cfg.method == "median":
        return impute_median(panel), ""
    if cfg.method == "cp":
        out = impute_cp(panel, cfg.solver())
        if cfg.keep_observed:
            out = np.where(panel.mask, panel.values, out)
        return out, ""
    out, report = run_act(panel, cfg.act())
    return out, report.to_text()


def cmd_impute(panel: MaskedTensor, cfg: io.ExperimentConfig, out: Path) -> dict:
    values, run_text = impute(panel, cfg)
    io.write_panel(out / "imputed.csv", panel, values)
    stats = {"method": cfg.method, "cells": int(values.size), "observed": panel.n_observed}
    sections = {"impute": stats}
    if run_text:
        sections["run"] = "".join(f"run.{line}\n" for line in run_text.splitlines())
    io.write_report(out / "impute_report.txt", sections, cfg)
    return stats


def cmd_evaluate(imputed: MaskedTensor, plan_path, cfg: io.ExperimentConfig, out: Path) -> dict:
    plan = io.read_plan(plan_path, imputed)
    held = imputed.mask[plan.index]
    if not np.all(held):
        i = int(np.argmin(held))
        raise ActTensorError(
            f"imputed panel has no value at ({imputed.months[plan.t[i]]}, {imputed.firms[plan.n[i]]}, "
            f"{imputed.characteristics[plan.l[i]]})"
        )
    scores = score(imputed.values, plan).as_dict()
    io.write_report(out / "metrics.txt", {"imputation": scores}, cfg)
    return scores


def price(values, market, cfg: io.ExperimentConfig, characteristics):
    """Return tensor, HOSVD factors, stepwise selection, forecasts, scores."""
    if cfg.size_char not in characteristics:
        raise ConfigError(f"size characteristic {cfg.size_char!r} not among {list(characteristics)}")
    size_index = list(characteristics).index(cfg.size_char)
    rt = build_return_tensor(values, market, cfg.p_buckets, cfg.q_buckets, size_index,
                             firm_ids=market.firms, characteristics=characteristics)
    ranks = tuple(min(k, d) for k, d in zip(cfg.mode_ranks, rt.values.shape[:3]))
    core, loadings = hosvd_partial_tucker(rt, ranks)
    factors = stack_factors(core)
    returns = rt.portfolio_matrix()
    target = min(cfg.n_factors, factors.shape[0])
    chosen, path = stepwise_select(factors, returns, target)
    model, forecasts = fit_and_forecast(factors, chosen, returns, loadings)
    scores = pricing_scores(model, forecasts, returns[:, 1:])
    summary = {
        "portfolios": returns.shape[0],
        "empty_baskets": int(rt.empty.sum()),
        "mode_ranks": ranks,
        "selected": tuple(chosen),
        "r2_path": tuple(path),
        "rank_deficient": model.rank_deficient,
    }
    return summary, scores.as_dict()


def cmd_price(imputed: MaskedTensor, market_dir, cfg: io.ExperimentConfig, out: Path) -> dict:
    market = io.read_market(market_dir, imputed)
    values = imputed.filled(np.nan)
    summary, scores = price(values, market, cfg, imputed.characteristics)
    io.write_report(out / "pricing.txt", {"factors": summary, "pricing": scores}, cfg)
    return scores


_SWEEPABLE = {"lam", "rank", "k", "tau", "delta", "theta", "kalman_h", "kalman_r"}


def cmd_sweep(masked: MaskedTensor, plan_path, cfg: io.ExperimentConfig, out: Path) -> list:
    """Impute and score once per grid value of ``cfg.sweep_param``."""
    name = cfg.sweep_param
    if name not in _SWEEPABLE:
        raise ConfigError(f"cannot sweep {name!r}; choose one of {sorted(_SWEEPABLE)}")
    plan = io.read_plan(plan_path, masked)
    rows = []
    for value in cfg.sweep_values:
        kind = type(getattr(cfg, name))
        point = replace(cfg, **{name: kind(value)})
        values, _ = impute(masked, point)
        s = score(values, plan)
        rows.append({"param": name, "value": kind(value), "rmse": s.rmse, "mae": s.mae, "r2": s.r2})
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("param", "value", "rmse", "mae", "r2"))
        for r in rows:
            w.writerow((r["param"], repr(r["value"]), repr(r["rmse"]), repr(r["mae"]),
                        "none" if r["r2"] is None else repr(r["r2"])))
    rmses = [r["rmse"] for r in rows]
    io.write_report(out / "sweep_report.txt",
                    {"sweep": {"param": name, "points": len(rows), "rmse_spread": max(rmses) - min(rmses)}}, cfg)
    return rows


# ---------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--regime", choices=("mar", "block", "logit"))
    common.add_argument("--smoother", choices=("none", "cma", "ema", "kalman"))
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--normalize", action="store_true", help="rank-normalize the panel at ingestion")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="act-tensor", description="Cluster-based CP completion of characteristic panels.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="write a synthetic panel and market data")
    s = sub.add_parser("mask", parents=[common], help="hold out cells for evaluation")
    s.add_argument("panel", type=Path)
    s = sub.add_parser("impute", parents=[common], help="complete a masked panel")
    s.add_argument("panel", type=Path)
    s.add_argument("--method", choices=io.METHODS)
    s = sub.add_parser("evaluate", parents=[common], help="score an imputed panel on a plan")
    s.add_argument("imputed", type=Path)
    s.add_argument("plan", type=Path)
    s = sub.add_parser("price", parents=[common], help="asset-pricing evaluation of an imputed panel")
    s.add_argument("imputed", type=Path)
    s.add_argument("market", type=Path, help="directory with returns.csv, mcap.csv, riskfree.csv")
    s = sub.add_parser("sweep", parents=[common], help="score a parameter grid")
    s.add_argument("panel", type=Path, help="masked panel")
    s.add_argument("plan", type=Path)
    s.add_argument("--method", choices=io.METHODS)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.normalize:
            cfg = replace(cfg, normalize=True)
        out = _out(args)
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "mask":
            cmd_mask(io.read_panel(args.panel, cfg.normalize), cfg, out)
        elif args.command == "impute":
            cmd_impute(io.read_panel(args.panel, cfg.normalize), cfg, out)
        elif args.command == "evaluate":
            cmd_evaluate(io.read_panel(args.imputed), args.plan, cfg, out)
        elif args.command == "price":
            cmd_price(io.read_panel(args.imputed), args.market, cfg, out)
        elif args.command == "sweep":
            cmd_sweep(io.read_panel(args.panel, cfg.normalize), args.plan, cfg, out)
    except (ActTensorError, OSError, ValueError) as exc:
        print(f"act-tensor {args.command}: {exc}".splitlines()[0], file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
