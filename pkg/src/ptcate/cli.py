"""Command-line entry point: ``ptcate <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen, evalkit, harness, nuisance, plots, pseudo, retarget
from .pseudo import PseudoOutcomeKind

GRADCHECK_TOL = 1e-4
CONSISTENCY_Z = 4.0


def _add_common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", required=config_required, help="YAML config path or builtin name (e.g. settingA)")
    p.add_argument("--seed", type=int, help="override the seed list with a single seed")
    p.add_argument("--gamma", type=float, help="override the gamma grid with a single value")
    p.add_argument("--out", help="output directory")
    p.add_argument("--kind", choices=["pi", "ra", "ipw", "dr"], type=str.lower, help="pseudo-outcome kind")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptcate", description="Policy-targeted CATE estimation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset CSV")
    _add_common(p)
    p.add_argument("--dgp", choices=datagen.DGP_NAMES, help="DGP name (default: from --config)")
    p.add_argument("--n", type=int, help="number of rows (default: n_train of the config)")

    p = sub.add_parser("train", help="train a single PT-CATE model")
    _add_common(p, config_required=True)

    p = sub.add_parser("sweep", help="gamma sweep over seeds and kinds, with plots")
    _add_common(p, config_required=True)

    p = sub.add_parser("hillstrom", help="gamma sweep on the Hillstrom email data")
    _add_common(p, config_required=True)
    p.add_argument("--data", help="path to the Hillstrom CSV (overrides data.path)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every training loss")
    _add_common(p)

    p = sub.add_parser("check-consistency", help="binned conditional-mean check of the pseudo-outcomes")
    _add_common(p)
    p.add_argument("--dgp", choices=datagen.DGP_NAMES, default=None)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--bins", type=int, default=20)
    return parser


def _apply_overrides(cfg: harness.ExperimentConfig, args) -> dict:
    overrides = {}
    if args.seed is not None:
        cfg.seeds = (args.seed,)
        overrides["seeds"] = [args.seed]
    if args.gamma is not None:
        if not 0 <= args.gamma <= 1:
            raise harness.ConfigError("--gamma must lie in [0, 1]")
        cfg.gamma_grid = (args.gamma,)
        overrides["gamma_grid"] = [args.gamma]
    if args.kind is not None:
        cfg.pseudo_kinds = (PseudoOutcomeKind.parse(args.kind),)
        overrides["pseudo_kinds"] = [args.kind.upper()]
    if args.out is not None:
        cfg.output_dir = args.out
        overrides["output_dir"] = args.out
    return overrides


def cmd_simulate(args) -> int:
    if args.config:
        cfg = harness.load_config(args.config)
        spec = cfg.dgp_spec()
        if args.dgp:
            spec = replace(spec, name=args.dgp)
    elif args.dgp:
        spec = datagen.DGPSpec(args.dgp)
    else:
        raise harness.ConfigError("simulate needs --dgp or --config")
    n = args.n or spec.n_train
    seed = args.seed or 0
    data = datagen.sample_dgp(spec, n, seed)
    out = Path(args.out or ".")
    path = out if out.suffix == ".csv" else out / f"{spec.name}_n{n}_seed{seed}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(path)
    print(path)
    return 0


def cmd_train(args) -> int:
    cfg = harness.load_config(args.config)
    overrides = _apply_overrides(cfg, args)
    if not cfg.is_synthetic:
        raise harness.ConfigError("train needs a synthetic dgp config")
    seed = cfg.seeds[0]
    kind = cfg.pseudo_kinds[0]
    gamma = cfg.gamma_grid[-1] if args.gamma is None else args.gamma
    spec, train, val, test = harness._synthetic_data(cfg, seed)
    nuis = harness._stage1(cfg, spec, train, seed)
    second = train if nuis.holdout is None else train.subset(nuis.holdout)
    ps = pseudo.build_pseudo_dataset(kind, nuis, second)
    pt = cfg.pt_config(kind, gamma)
    if cfg.alpha_floor_candidates and gamma > 0 and val is not None:
        val_nuis = nuisance.oracle_nuisance(spec) if cfg.oracle_nuisance else nuis
        ps_val = pseudo.build_pseudo_dataset(kind, val_nuis, val)
        pt = replace(pt, alpha_floor=retarget.select_alpha_floor(cfg.alpha_floor_candidates, ps, ps_val, pt, seed))
    model = retarget.train_ptcate(ps, pt, seed)
    report = evalkit.MetricReport(
        gamma=gamma, seed=seed, kind=kind.value,
        pehe=evalkit.pehe(model, test.tau, test.X),
        policy_loss=evalkit.policy_loss(model, test.tau, test.X),
        policy_value=harness._true_policy_value(spec, model, test.X),
        n_eval=len(test),
    )
    result = harness.ExperimentResult([report], {}, cfg.source_text, overrides=overrides)
    result.extra["alpha_floor"] = pt.alpha_floor
    out = Path(cfg.output_dir)
    result.write(out)
    (out / "model.json").write_text(model.to_json())
    if cfg.nuisance and not cfg.oracle_nuisance and not cfg.nuisance.known_propensity:
        (out / "nuisance.json").write_text(nuis.to_json())
    print(f"kind={kind.value} gamma={gamma:g} seed={seed} pehe={report.pehe:.6g} "
          f"policy_loss={report.policy_loss:.6g} alpha_floor={pt.alpha_floor:g} model={out / 'model.json'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    overrides = _apply_overrides(cfg, args)
    result = harness.run_sweep(cfg, write=False)
    result.overrides = overrides
    csv_path = result.write(cfg.output_dir)
    figures = plots.emit_plots(result, cfg.output_dir)
    for (kind, gamma), entry in sorted(result.summary().items()):
        print(f"{kind:>4} gamma={gamma:<5g} pehe={entry['pehe'][0]:.5f}+-{entry['pehe'][1]:.5f} "
              f"policy_loss={entry['policy_loss'][0]:.5f}+-{entry['policy_loss'][1]:.5f}")
    print(f"wrote {csv_path} and {len(figures)} figures")
    if result.failures:
        for cell, err in sorted(result.failures.items()):
            print(f"failed {cell}: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_hillstrom(args) -> int:
    cfg = harness.load_config(args.config)
    overrides = _apply_overrides(cfg, args)
    if args.data:
        cfg.data["path"] = args.data
        overrides["data.path"] = args.data
    result, table = harness.run_hillstrom(cfg, write=False)
    result.overrides = overrides
    result.write(cfg.output_dir)
    (Path(cfg.output_dir) / "improvement_table.txt").write_text(evalkit.format_improvement_table(table) + "\n")
    plots.emit_plots(result, cfg.output_dir)
    print(evalkit.format_improvement_table(table))
    return 0


def cmd_gradcheck(args) -> int:
    reports = harness.gradcheck_suite(seed=args.seed or 0)
    worst = 0.0
    for name, rep in reports.items():
        status = "ok" if rep.max_relative_error <= GRADCHECK_TOL else "FAIL"
        print(f"{name:<40} max_rel_err={rep.max_relative_error:.3e} params={rep.n_params} {status}")
        worst = max(worst, rep.max_relative_error)
    return 0 if worst <= GRADCHECK_TOL else 1


def cmd_check_consistency(args) -> int:
    if args.dgp:
        dgps = [args.dgp]
    elif args.config:
        dgps = [harness.load_config(args.config).data["dgp"]]
    else:
        dgps = ["fig2_sigmoid", "fig1_piecewise"]
    kinds = [PseudoOutcomeKind.parse(args.kind)] if args.kind else list(PseudoOutcomeKind)
    ok = True
    rows = []
    for dgp in dgps:
        for kind in kinds:
            rep = pseudo.conditional_mean_check(kind, datagen.DGPSpec(dgp), args.n, args.bins, args.seed or 0)
            passed = bool(rep.max_abs_z < CONSISTENCY_Z)
            ok &= passed
            rows.append({"dgp": dgp, "kind": kind.value, "max_abs_z": rep.max_abs_z,
                         "flagged_bins": rep.flagged.tolist(), "passed": passed})
            print(f"{dgp:<15} {kind.value:<4} max|z|={rep.max_abs_z:.3f} "
                  f"flagged={len(rep.flagged)} {'ok' if passed else 'FAIL'}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "consistency.json").write_text(json.dumps(rows, indent=2))
    return 0 if ok else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "hillstrom": cmd_hillstrom,
    "gradcheck": cmd_gradcheck,
    "check-consistency": cmd_check_consistency,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - one-line error contract
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
