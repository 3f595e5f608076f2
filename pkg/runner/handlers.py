"""
Command handlers invoked by the CLI runner.

Every handler takes the parsed argparse namespace and the run directory,
writes its artifacts there and returns (result dict, list of written files).
"""

import logging
import os

import numpy as np
import pandas as pd

from experiments.ensemble import direct_only_deviation, records_frame, run_ensemble, spillover_frame
from experiments.network_study import CANONICAL_COMPARISONS, compare_networks, k_mean_curve
from experiments.regression import (
    DIRECT,
    FULL,
    KMEAN,
    CurveData,
    NetworkData,
    fit_nls,
    model_comparison,
    regression_frame,
)
from experiments.sweeps import SweepSpec, run_sweep
from model.errors import ConfigurationError, ValidationError
from model.params import Grid, ModelParams, SolverOptions
from services.equilibrium import solution_residuals, solve_mfg
from services.micro_sim import SimConfig, empirical_vs_mfg, equilibrium_policy, final_histogram, simulate, trajectory_frame
from services.network_service import (
    EQUAL,
    RANDOM_SIMPLEX,
    baseline_network,
    network_to_document,
    random_network,
    spillover_matrix,
)
from tools.analysis_tools import summarize_ensemble, summarize_sweep
from tools.data_tools import (
    export_spillover_csv,
    load_network_file,
    load_params,
    params_to_toml,
    save_csv,
    save_json,
    save_text,
)

logger = logging.getLogger(__name__)


# -- shared argument resolution -------------------------------------------------

def resolve_params(args) -> ModelParams:
    params = load_params(args.params) if args.params else ModelParams()
    if args.fixed_b is not None:
        if not args.fixed_b > 0:
            raise ValidationError("fixed-b", f"must be > 0, got {args.fixed_b}")
        params = params.with_fixed_price(args.fixed_b)
    return params


def resolve_network(args):
    if getattr(args, "network", None):
        return load_network_file(args.network)
    if getattr(args, "generate", None):
        try:
            sectors, prob, weight_max = args.generate.split(",")
            return random_network(int(sectors), float(prob), float(weight_max), RANDOM_SIMPLEX, seed=args.seed)
        except ValueError as e:
            raise ValidationError("generate", f"expected 'L,prob,weight_max', got {args.generate!r}") from e
    return baseline_network()


def resolve_options(args) -> SolverOptions:
    return SolverOptions.from_config(threads=args.threads)


def resolve_grid(args, params: ModelParams) -> Grid:
    return Grid.for_params(params, args.grid)


def parse_values(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ValidationError("values", f"expected comma-separated numbers, got {text!r}") from e


def _write_inputs(params: ModelParams, out_dir: str, net=None) -> list:
    written = [save_text(params_to_toml(params), os.path.join(out_dir, "params.toml"))]
    if net is not None:
        written.append(save_json(network_to_document(net), os.path.join(out_dir, "network.json")))
    return written


# -- handlers ------------------------------------------------------------------------

def handle_solve(args, out_dir: str):
    params = resolve_params(args)
    net = resolve_network(args)
    grid = resolve_grid(args, params)
    solution = solve_mfg(params, net, grid, resolve_options(args))

    written = _write_inputs(params, out_dir, net)
    for sector in range(net.n_sectors):
        written.append(save_csv(solution.sector_frame(sector), os.path.join(out_dir, f"sector_{sector + 1}.csv")))
    written.append(export_spillover_csv(spillover_matrix(net, params.z_max), os.path.join(out_dir, "spillover.csv")))

    summary = solution.summary()
    summary["residuals"] = solution_residuals(solution).to_dict(orient="records")
    written.append(save_json(summary, os.path.join(out_dir, "summary.json")))
    return summary, written


def handle_sweep(args, out_dir: str):
    params = resolve_params(args)
    net = resolve_network(args)
    spec = SweepSpec(
        parameter=args.vary,
        values=tuple(parse_values(args.values)),
        base=params,
        network=net,
        grid_points=args.grid,
        options=resolve_options(args),
    )
    result = run_sweep(spec)
    written = _write_inputs(params, out_dir, net)
    written.append(save_csv(
        result.table[["param_value", "sector", "mean_productivity"]], os.path.join(out_dir, "sweep.csv")
    ))
    written.append(save_csv(result.densities, os.path.join(out_dir, "density_curves.csv")))
    summary = {
        "parameter": spec.parameter,
        "values": list(spec.values),
        "failures": result.failures,
        "sectors": summarize_sweep(result.table),
    }
    return summary, written


def handle_networks(args, out_dir: str):
    params = resolve_params(args)
    grid = resolve_grid(args, params)
    opts = resolve_options(args)
    solutions = {}
    comparisons = []
    written = _write_inputs(params, out_dir)
    for ids, sector in CANONICAL_COMPARISONS:
        comparison = compare_networks(ids, sector, params, grid, opts, solutions=solutions)
        name = f"diff_net{ids[0]}_net{ids[1]}_{sector}.csv"
        written.append(save_csv(comparison.to_frame(), os.path.join(out_dir, name)))
        comparisons.append(
            {
                "ids": list(ids),
                "sector": sector,
                "means": list(comparison.means),
                "mean_difference": comparison.mean_difference,
            }
        )
    summary = {
        "price_mode": params.price_mode,
        "edge_weight": 1.0,
        "sector_weights": "equal",
        "comparisons": comparisons,
        "networks": {str(i): s.summary() for i, s in sorted(solutions.items())},
    }
    written.append(save_json(summary, os.path.join(out_dir, "networks.json")))
    return summary, written


def _ensemble(args, params: ModelParams):
    return run_ensemble(
        n_runs=args.runs,
        n_sectors=args.sectors,
        connection_prob=args.prob,
        weight_max=args.weight_max,
        seed=args.seed,
        sector_weights=EQUAL if args.equal_weights else RANDOM_SIMPLEX,
        params=params,
        grid_points=args.grid,
        opts=resolve_options(args),
        threads=args.threads,
    )


def _write_ensemble(result, out_dir: str) -> tuple:
    records = records_frame(result.records)
    spill = spillover_frame(result.records)
    written = [
        save_csv(records, os.path.join(out_dir, "ensemble_records.csv")),
        save_csv(spill, os.path.join(out_dir, "ensemble_S.csv")),
    ]
    return records, spill, written


def handle_ensemble(args, out_dir: str):
    params = resolve_params(args)
    result = _ensemble(args, params)
    records, _, written = _write_ensemble(result, out_dir)
    written.extend(_write_inputs(params, out_dir))
    summary = summarize_ensemble(records)
    summary["failures"] = result.failures
    summary["direct_only_max_relative_gap"] = direct_only_deviation(result.records)
    written.append(save_json(summary, os.path.join(out_dir, "ensemble_summary.json")))
    return summary, written


def handle_regress(args, out_dir: str):
    params = resolve_params(args)
    written = _write_inputs(params, out_dir)
    if args.source:
        records_path = os.path.join(args.source, "ensemble_records.csv")
        s_path = os.path.join(args.source, "ensemble_S.csv")
        for path in (records_path, s_path):
            if not os.path.isfile(path):
                raise ConfigurationError(f"file not found: {path}")
        data = NetworkData.from_frames(pd.read_csv(records_path), pd.read_csv(s_path), params.z_max)
    else:
        result = _ensemble(args, params)
        _, _, ensemble_files = _write_ensemble(result, out_dir)
        written.extend(ensemble_files)
        data = NetworkData.from_records(result.records, params.z_max)

    fit_indirect = fit_nls(FULL, data)
    fit_direct = fit_nls(DIRECT, data)
    comparison = model_comparison(data, fit_indirect, fit_direct)
    written.append(save_csv(regression_frame([fit_indirect, fit_direct]), os.path.join(out_dir, "regression.csv")))
    summary = {
        "networks": len(data),
        "indirect": fit_indirect.as_dict(),
        "direct": fit_direct.as_dict(),
        "converged": fit_indirect.converged and fit_direct.converged,
        "comparison": comparison.to_dict(),
    }
    written.append(save_json(summary, os.path.join(out_dir, "regression_summary.json")))
    return summary, written


def handle_simulate(args, out_dir: str):
    params = resolve_params(args)
    net = resolve_network(args)
    grid = resolve_grid(args, params)
    solution = solve_mfg(params, net, grid, resolve_options(args))

    config = SimConfig(
        firms_per_sector=(args.firms,) * net.n_sectors,
        horizon=args.horizon,
        dt=args.dt,
        seed=args.seed,
        record_every=args.record_every,
    )
    controls = [equilibrium_policy(solution, s) for s in range(net.n_sectors)]
    trajectory = simulate(config, net, params, controls)
    report = empirical_vs_mfg(trajectory, solution, burn_in=args.burn_in)

    written = _write_inputs(params, out_dir, net)
    written.append(save_csv(trajectory_frame(trajectory), os.path.join(out_dir, "trajectory.csv")))
    written.append(save_csv(final_histogram(trajectory), os.path.join(out_dir, "histogram.csv")))
    summary = {
        "applicable": report.applicable,
        "note": report.note,
        "snapshots": report.snapshots,
        "sectors": report.to_frame().to_dict(orient="records"),
        "mfg": solution.summary(),
    }
    written.append(save_json(summary, os.path.join(out_dir, "mean_field.json")))
    return summary, written


def handle_kcurve(args, out_dir: str):
    params = resolve_params(args)
    grid = resolve_grid(args, params)
    ks = parse_values(args.k_values) if args.k_values else list(np.linspace(0.0, 5.0, 21))
    curve = k_mean_curve(ks, params, grid, resolve_options(args))
    fit = fit_nls(KMEAN, CurveData.from_frame(curve, params.z_max))

    written = _write_inputs(params, out_dir)
    written.append(save_csv(curve, os.path.join(out_dir, "kcurve.csv")))
    written.append(save_csv(regression_frame([fit]), os.path.join(out_dir, "kcurve_fit.csv")))
    summary = {"points": len(curve), "fit": fit.as_dict(), "r_squared": fit.r_squared}
    return summary, written
