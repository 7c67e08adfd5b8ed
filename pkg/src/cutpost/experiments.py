"""Batch experiment runners behind the command-line interface.

Each runner enumerates its work as deterministic cells, executes them on a
worker pool (per-cell RNG streams are keyed by the master seed and the cell
index, so the thread count never affects results), and writes plot-ready
CSV/JSON files with a reproducibility header.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.special import ndtr

from . import __version__, diagnostics, families
from .cutcore import ConfigError, EcpConfig, direct_sample, ecp_sample, little_aggregate
from .doe import DesignMatrix, iid_design, lhs_design, mined_design, support_points
from .problems import (
    DbConfig,
    build_gamma_pool,
    db_cut_analytic,
    db_generate,
    db_problem,
    db_suffstats,
    eco_problem,
    load_eco_data,
)
from .rng import spawn_rng
from .seqecp import sequential_ecp

DB_METHODS = ("ds", "ds-normal", "ecp", "ecp-laplace", "seq-ecp")
SAMPLERS = ("iid", "lhs", "support", "mined")
ECO_METHODS = ("ds", "ds-normal", "ecp")

PRESETS = {
    "db-benchmark": {
        "desk": {"budgets": (10, 50, 250), "reps": 25, "total_draws": 10_000},
        "paper": {"budgets": (10, 25, 50, 100, 250, 500), "reps": 25, "total_draws": 10_000},
    },
    "doe-compare": {
        "desk": {"L": 30, "reps": 25},
        "paper": {"L": 30, "reps": 25},
    },
    "eco-benchmark": {
        "desk": {
            "budgets": (25, 50, 100),
            "reps": 5,
            "ground_truth_l": 2000,
            "pool_size": 30_000,
            "pool_burn_in": 4000,
            "ds_total_draws": 100_000,
            "ecp_m": 500,
            "prediction_m": 10_000,
            "draws_per_component": 10,
        },
        "paper": {
            "budgets": (10, 25, 50, 100, 250, 1000),
            "reps": 25,
            "ground_truth_l": 10_000,
            "pool_size": 90_000,
            "pool_burn_in": 10_000,
            "ds_total_draws": 100_000,
            "ecp_m": 500,
            "prediction_m": 10_000,
            "draws_per_component": 10,
        },
    },
    "coverage": {
        "desk": {"reps": 5000, "grid": tuple(np.round(np.linspace(0.1, 6.0, 13), 3))},
        "paper": {"reps": 10_000, "grid": tuple(np.round(np.linspace(0.1, 6.0, 25), 3))},
    },
    "seq-demo": {
        "desk": {"build_size": 5, "L": 10, "reps": 25, "u": 0.9},
        "paper": {"build_size": 5, "L": 10, "reps": 25, "u": 0.9},
    },
}


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------


def _header_lines(config: dict, seed: int) -> list[str]:
    cfg = json.dumps(config, sort_keys=True, default=str)
    return [
        f"# cutpost {__version__}",
        f"# seed={seed}",
        f"# config={cfg}",
    ]


def write_rows(path, fieldnames, rows, config, seed, fmt="csv"):
    if fmt == "csv":
        with open(path, "w") as fh:
            for line in _header_lines(config, seed):
                fh.write(line + "\n")
            fh.write(",".join(fieldnames) + "\n")
            for row in rows:
                fh.write(",".join(_cell_str(row[k]) for k in fieldnames) + "\n")
    elif fmt == "json":
        payload = {
            "tool": f"cutpost {__version__}",
            "seed": seed,
            "config": config,
            "rows": [{k: row[k] for k in fieldnames} for row in rows],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, default=_json_default)
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    return path


def _cell_str(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v)}")


def _run_cells(worker, args_list, threads: int):
    if threads <= 1:
        results = [worker(a) for a in args_list]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(worker, args_list, chunksize=1))
    results.sort(key=lambda r: r[0])
    rows = []
    for _, cell_rows in results:
        rows.extend(cell_rows)
    return rows


def _now_ms(start, timing):
    if timing == "zero":
        return 0
    return int(round((time.perf_counter() - start) * 1000.0))


# ---------------------------------------------------------------------------
# diamond-in-a-box benchmark  (accuracy vs analytic cut over budgets)
# ---------------------------------------------------------------------------


def _db_cell(args):
    (index, budget, sampler, methods, rep, seed, total_draws, timing) = args
    cfg = DbConfig()
    data_rng = spawn_rng(seed, 900)  # one data set shared by every cell
    y = db_generate(cfg, data_rng)
    ybar1, ybar2 = db_suffstats(y, cfg)
    truth = db_cut_analytic(cfg, ybar1, ybar2)
    problem = db_problem(cfg, y)
    m = max(1, total_draws // budget)

    def truth_cdf(x):
        return ndtr((np.asarray(x, dtype=float) - truth.mu) / truth.sigma)

    rows = []
    raw = None
    for method in methods:
        rng = spawn_rng(seed, 901, index, DB_METHODS.index(method))
        start = time.perf_counter()
        if method in ("ds", "ds-normal"):
            if raw is None:
                raw = direct_sample(problem, budget, m, rng, design_method=sampler)
            if method == "ds":
                samples = raw.samples
            else:
                agg = little_aggregate(raw)
                samples = agg.sample(total_draws, rng.spawn(1)[0])
        elif method in ("ecp", "ecp-laplace"):
            ecfg = EcpConfig(
                family=families.NORMAL,
                L=budget,
                m=m,
                M=total_draws,
                design_method=sampler,
                prediction_method="prior",
                phase1="laplace" if method == "ecp-laplace" else "mcmc",
            )
            mixture, _ = ecp_sample(problem, ecfg, rng)
            samples = mixture.sample(total_draws, spawn_rng(seed, 902, index, DB_METHODS.index(method)))
        elif method == "seq-ecp":
            ecfg = EcpConfig(
                family=families.NORMAL,
                L=budget,
                m=m,
                M=total_draws,
                design_method=sampler,
                prediction_method="prior",
            )
            mixture, _, _ = sequential_ecp(problem, ecfg, max(3, budget // 2), rng)
            samples = mixture.sample(total_draws, spawn_rng(seed, 902, index, DB_METHODS.index(method)))
        else:
            raise ConfigError(f"unknown method {method!r}")
        ks = diagnostics.ks_to_cdf(samples, truth_cdf).distance
        wall = _now_ms(start, timing)
        rows.append(
            {
                "method": method,
                "sampler": sampler,
                "L": budget,
                "rep": rep,
                "seed": seed,
                "ks": ks,
                "log_ks": math.log(ks),
                "wall_ms": wall,
            }
        )
    return index, rows


def run_db_benchmark(
    out_dir,
    seed=0,
    threads=1,
    budgets=(10, 50, 250),
    reps=25,
    methods=("ds", "ds-normal", "ecp"),
    samplers=("iid",),
    total_draws=10_000,
    fmt="csv",
    timing="real",
):
    """KS accuracy of each engine against the analytic cut-distribution."""
    _validate_choices("methods", methods, DB_METHODS)
    _validate_choices("samplers", samplers, SAMPLERS)
    if any(b < 1 for b in budgets):
        raise ConfigError("budgets must be positive")
    if any(b < 3 for b in budgets) and set(methods) & {"ecp", "ecp-laplace", "seq-ecp"}:
        raise ConfigError("emulation methods need budgets of at least 3")

    cells = []
    index = 0
    for budget in budgets:
        for sampler in samplers:
            for rep in range(reps):
                cells.append((index, budget, sampler, tuple(methods), rep, seed, total_draws, timing))
                index += 1
    rows = _run_cells(_db_cell, cells, threads)
    config = {
        "subcommand": "db-benchmark",
        "budgets": list(budgets),
        "reps": reps,
        "methods": list(methods),
        "samplers": list(samplers),
        "total_draws": total_draws,
        "threads_invariant": True,
    }
    fields = ["method", "sampler", "L", "rep", "seed", "ks", "log_ks", "wall_ms"]
    ext = "csv" if fmt == "csv" else "json"
    return [write_rows(f"{out_dir}/db_benchmark.{ext}", fields, rows, config, seed, fmt)]


# ---------------------------------------------------------------------------
# design-of-experiments comparison  (how well designs represent the prior)
# ---------------------------------------------------------------------------


def _doe_cell(args):
    (index, sampler, rep, size, seed, timing, kde_grid) = args
    cfg = DbConfig()
    prior = db_problem(cfg, np.zeros(cfg.n)).prior
    rng = spawn_rng(seed, 910, index)
    start = time.perf_counter()
    if sampler == "iid":
        design = iid_design(prior.sample, size, rng)
    elif sampler == "lhs":
        design = lhs_design(prior.quantile_fns, size, rng)
    elif sampler == "support":
        design = support_points(prior, size, rng)
    elif sampler == "mined":
        init = lhs_design(prior.quantile_fns, size, rng)
        design = mined_design(prior.log_density, size, init, ((-np.inf,), (np.inf,)), rng)
    else:
        raise ConfigError(f"unknown sampler {sampler!r}")
    wall = _now_ms(start, timing)

    def prior_cdf(x):
        return ndtr((np.asarray(x) - cfg.mu_gamma) / cfg.sigma_gamma)

    ks = diagnostics.ks_to_cdf(design.points[:, 0], prior_cdf).distance
    rows = [
        {
            "sampler": sampler,
            "L": size,
            "rep": rep,
            "seed": seed,
            "ks": ks,
            "log_ks": math.log(ks),
            "wall_ms": wall,
        }
    ]
    kde = diagnostics.kde_1d(design.points[:, 0])
    kde_rows = [
        {"sampler": sampler, "rep": rep, "x": float(x), "density": float(d)}
        for x, d in zip(kde_grid, kde(np.asarray(kde_grid)))
    ]
    return index, [(rows, kde_rows)]


def run_doe_compare(
    out_dir,
    seed=0,
    threads=1,
    L=30,
    reps=25,
    samplers=SAMPLERS,
    fmt="csv",
    timing="real",
):
    """KS of each design to the case-weight distribution, plus KDE grids."""
    _validate_choices("samplers", samplers, SAMPLERS)
    cfg = DbConfig()
    kde_grid = tuple(
        np.round(np.linspace(cfg.mu_gamma - 4 * cfg.sigma_gamma, cfg.mu_gamma + 4 * cfg.sigma_gamma, 161), 6)
    )
    cells = []
    index = 0
    for sampler in samplers:
        for rep in range(reps):
            cells.append((index, sampler, rep, L, seed, timing, kde_grid))
            index += 1
    packed = _run_cells(_doe_cell, cells, threads)
    rows = [r for pack in packed for r in pack[0]]
    kde_rows = [r for pack in packed for r in pack[1]]
    config = {"subcommand": "doe-compare", "L": L, "reps": reps, "samplers": list(samplers)}
    ext = "csv" if fmt == "csv" else "json"
    paths = [
        write_rows(
            f"{out_dir}/doe_compare.{ext}",
            ["sampler", "L", "rep", "seed", "ks", "log_ks", "wall_ms"],
            rows,
            config,
            seed,
            fmt,
        ),
        write_rows(
            f"{out_dir}/doe_kde.{ext}",
            ["sampler", "rep", "x", "density"],
            kde_rows,
            config,
            seed,
            fmt,
        ),
    ]
    return paths


# ---------------------------------------------------------------------------
# ecological benchmark  (per-marginal KS vs simulated ground truth)
# ---------------------------------------------------------------------------


def _eco_cell(args):
    (index, rep, seed, budgets, methods, opts, timing) = args
    data = load_eco_data()
    rng_pool = spawn_rng(seed, 920, rep)
    pool, pool_info = build_gamma_pool(
        data, opts["pool_size"], rng_pool, burn_in=opts["pool_burn_in"]
    )
    problem = eco_problem(data, pool)

    gt_rng = spawn_rng(seed, 921, rep)
    gt = direct_sample(problem, opts["ground_truth_l"], 1, gt_rng, design_method="iid")
    gt_samples = gt.samples

    pred_rng = spawn_rng(seed, 922, rep)
    pred_points = problem.prior.sample(opts["prediction_m"], pred_rng)
    pred_design = DesignMatrix(pred_points, "pool-thin", {"M": opts["prediction_m"]})

    rows = []
    kde_rows = []
    grids = {}
    for j in range(2):
        lo, hi = np.percentile(gt_samples[:, j], [0.1, 99.9])
        pad = 0.35 * (hi - lo)
        grids[j] = np.linspace(lo - pad, hi + pad, 161)
        kde = diagnostics.kde_1d(gt_samples[:, j])
        kde_rows.extend(
            {
                "budget": 0,
                "method": "truth",
                "rep": rep,
                "marginal": f"a{j + 1}",
                "x": float(x),
                "density": float(d),
            }
            for x, d in zip(grids[j], kde(grids[j]))
        )

    for budget in budgets:
        raw = None
        for method in methods:
            rng = spawn_rng(seed, 923, rep, budget, ECO_METHODS.index(method))
            start = time.perf_counter()
            if method in ("ds", "ds-normal"):
                if raw is None:
                    m = max(1, opts["ds_total_draws"] // budget)
                    raw = direct_sample(problem, budget, m, rng, design_method="support")
                if method == "ds":
                    samples = raw.samples
                else:
                    samples = little_aggregate(raw).sample(
                        opts["ds_total_draws"], rng.spawn(1)[0]
                    )
            elif method == "ecp":
                ecfg = EcpConfig(
                    family=families.mvn(2),
                    L=budget,
                    m=opts["ecp_m"],
                    M=opts["prediction_m"],
                    design_method="support",
                    prediction_method=pred_design,
                    inflate=opts.get("inflate"),
                )
                mixture, _ = ecp_sample(problem, ecfg, rng)
                samples = mixture.sample(
                    opts["prediction_m"] * opts["draws_per_component"],
                    spawn_rng(seed, 924, rep, budget),
                )
            else:
                raise ConfigError(f"unknown method {method!r}")
            ks = [
                diagnostics.ks_two_sample(samples[:, j], gt_samples[:, j]).distance
                for j in range(2)
            ]
            wall = _now_ms(start, timing)
            rows.append(
                {
                    "budget": budget,
                    "method": method,
                    "rep": rep,
                    "seed": seed,
                    "ks_a1": ks[0],
                    "ks_a2": ks[1],
                    "ks_max": max(ks),
                    "ks_mean": 0.5 * (ks[0] + ks[1]),
                    "wall_ms": wall,
                }
            )
            for j in range(2):
                kde = diagnostics.kde_1d(samples[:, j])
                kde_rows.extend(
                    {
                        "budget": budget,
                        "method": method,
                        "rep": rep,
                        "marginal": f"a{j + 1}",
                        "x": float(x),
                        "density": float(d),
                    }
                    for x, d in zip(grids[j], kde(grids[j]))
                )

    gamma_rows = []
    for k in range(5):
        kde = diagnostics.kde_1d(pool[:, k])
        grid = np.linspace(0.0, 1.0, 161)
        gamma_rows.extend(
            {
                "rep": rep,
                "margin": f"g{k + 1}",
                "x": float(x),
                "density": float(d),
                "acceptance_rate": pool_info["acceptance_rate"],
            }
            for x, d in zip(grid, kde(grid))
        )
    return index, [(rows, kde_rows, gamma_rows)]


def run_eco_benchmark(
    out_dir,
    seed=0,
    threads=1,
    budgets=(25, 50, 100),
    reps=5,
    methods=ECO_METHODS,
    ground_truth_l=2000,
    pool_size=30_000,
    pool_burn_in=4000,
    ds_total_draws=100_000,
    ecp_m=500,
    prediction_m=10_000,
    draws_per_component=10,
    inflate=None,
    fmt="csv",
    timing="real",
):
    """Per-marginal KS of each engine against a large direct-sampling run."""
    _validate_choices("methods", methods, ECO_METHODS)
    if ground_truth_l < max(budgets):
        raise ConfigError("ground truth budget must exceed the benchmark budgets")
    opts = {
        "ground_truth_l": ground_truth_l,
        "pool_size": pool_size,
        "pool_burn_in": pool_burn_in,
        "ds_total_draws": ds_total_draws,
        "ecp_m": ecp_m,
        "prediction_m": prediction_m,
        "draws_per_component": draws_per_component,
        "inflate": inflate,
    }
    cells = [
        (rep, rep, seed, tuple(budgets), tuple(methods), opts, timing)
        for rep in range(reps)
    ]
    packed = _run_cells(_eco_cell, cells, threads)
    rows = [r for pack in packed for r in pack[0]]
    kde_rows = [r for pack in packed for r in pack[1]]
    gamma_rows = [r for pack in packed for r in pack[2]]
    config = {
        "subcommand": "eco-benchmark",
        "budgets": list(budgets),
        "reps": reps,
        "methods": list(methods),
        **{k: (list(v) if isinstance(v, tuple) else v) for k, v in opts.items()},
    }
    ext = "csv" if fmt == "csv" else "json"
    return [
        write_rows(
            f"{out_dir}/eco_benchmark.{ext}",
            ["budget", "method", "rep", "seed", "ks_a1", "ks_a2", "ks_max", "ks_mean", "wall_ms"],
            rows,
            config,
            seed,
            fmt,
        ),
        write_rows(
            f"{out_dir}/eco_marginal_kde.{ext}",
            ["budget", "method", "rep", "marginal", "x", "density"],
            kde_rows,
            config,
            seed,
            fmt,
        ),
        write_rows(
            f"{out_dir}/eco_gamma_kde.{ext}",
            ["rep", "margin", "x", "density", "acceptance_rate"],
            gamma_rows,
            config,
            seed,
            fmt,
        ),
    ]


# ---------------------------------------------------------------------------
# coverage study
# ---------------------------------------------------------------------------


def run_coverage_study(
    out_dir,
    seed=0,
    threads=1,
    sweep="sigma_star",
    grid=tuple(np.round(np.linspace(0.1, 6.0, 13), 3)),
    reps=5000,
    level=0.95,
    fmt="csv",
    timing="real",
):
    """Misspecification study: empirical coverage and MSE of the analytic
    full-Bayes and cut posteriors on synthetic diamond-in-a-box data."""
    cfg = DbConfig(
        n1=10,
        n2=90,
        sigma=1.0,
        mu_alpha=0.0,
        sigma_alpha=math.inf,
        mu_gamma=0.0,
        sigma_gamma=0.5,
        true_alpha=0.0,
        true_gamma=0.0,
    )
    start = time.perf_counter()
    table = diagnostics.coverage_study(
        cfg, sweep, grid, reps, spawn_rng(seed, 930), level=level
    )
    wall = _now_ms(start, timing)
    rows = [
        {
            "setting": r.setting,
            "method": r.method,
            "coverage": r.coverage,
            "mse": r.mse,
            "reps": r.reps,
            "level": r.level,
            "seed": seed,
            "wall_ms": wall,
        }
        for r in table
    ]
    config = {"subcommand": "coverage", "sweep": sweep, "grid": list(grid), "reps": reps, "level": level}
    ext = "csv" if fmt == "csv" else "json"
    return [
        write_rows(
            f"{out_dir}/coverage.{ext}",
            ["setting", "method", "coverage", "mse", "reps", "level", "seed", "wall_ms"],
            rows,
            config,
            seed,
            fmt,
        )
    ]


# ---------------------------------------------------------------------------
# sequential ECP demo
# ---------------------------------------------------------------------------


def _seq_cell(args):
    (index, rep, seed, build_size, total, u, timing) = args
    cfg = DbConfig()
    y = db_generate(cfg, spawn_rng(seed, 900))
    ybar1, ybar2 = db_suffstats(y, cfg)
    truth = db_cut_analytic(cfg, ybar1, ybar2)
    problem = db_problem(cfg, y)

    def truth_cdf(x):
        return ndtr((np.asarray(x, dtype=float) - truth.mu) / truth.sigma)

    ecfg = EcpConfig(family=families.NORMAL, L=total, m=500, M=10_000, design_method="iid")
    start = time.perf_counter()
    mix_seq, _, trace = sequential_ecp(
        problem, ecfg, build_size, spawn_rng(seed, 940, rep), u=u
    )
    ks_seq = diagnostics.ks_to_cdf(
        mix_seq.sample(10_000, spawn_rng(seed, 941, rep)), truth_cdf
    ).distance
    mix_ecp, _ = ecp_sample(problem, ecfg, spawn_rng(seed, 940, rep))
    ks_ecp = diagnostics.ks_to_cdf(
        mix_ecp.sample(10_000, spawn_rng(seed, 941, rep)), truth_cdf
    ).distance
    wall = _now_ms(start, timing)

    rows = [
        {
            "rep": rep,
            "seed": seed,
            "build_size": build_size,
            "L": total,
            "u": u,
            "ks_seq": ks_seq,
            "ks_ecp": ks_ecp,
            "wall_ms": wall,
        }
    ]
    trace_rows = [
        {
            "rep": rep,
            "round": t["round"],
            "gamma": float(t["gamma"][0]),
            "score": t["score"],
            "n_rejected": t["n_rejected"],
            "fallback": int(t["fallback"]),
        }
        for t in trace
    ]
    return index, [(rows, trace_rows)]


def run_seq_demo(
    out_dir,
    seed=0,
    threads=1,
    build_size=5,
    L=10,
    reps=25,
    u=0.9,
    fmt="csv",
    timing="real",
):
    """Sequential vs plain emulation on the diamond problem, with traces."""
    if not 3 <= build_size <= L:
        raise ConfigError("need 3 <= build_size <= L")
    cells = [(rep, rep, seed, build_size, L, u, timing) for rep in range(reps)]
    packed = _run_cells(_seq_cell, cells, threads)
    rows = [r for pack in packed for r in pack[0]]
    trace_rows = [r for pack in packed for r in pack[1]]
    config = {"subcommand": "seq-demo", "build_size": build_size, "L": L, "reps": reps, "u": u}
    ext = "csv" if fmt == "csv" else "json"
    return [
        write_rows(
            f"{out_dir}/seq_demo.{ext}",
            ["rep", "seed", "build_size", "L", "u", "ks_seq", "ks_ecp", "wall_ms"],
            rows,
            config,
            seed,
            fmt,
        ),
        write_rows(
            f"{out_dir}/seq_trace.{ext}",
            ["rep", "round", "gamma", "score", "n_rejected", "fallback"],
            trace_rows,
            config,
            seed,
            fmt,
        ),
    ]


def _validate_choices(name, values, allowed):
    bad = [v for v in values if v not in allowed]
    if bad:
        raise ConfigError(f"unknown {name}: {bad}; allowed: {list(allowed)}")
    if not values:
        raise ConfigError(f"{name} must not be empty")
