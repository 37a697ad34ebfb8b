"""Experiment runner: association comparisons, joint histories, slot verification.

Outputs per run directory:
  manifest.json        everything needed to reproduce each CSV byte for byte
  results.csv          long format, one row per (alpha, algorithm, seed)
  table_utilities.csv  utility-versus-alpha table (Greedy/GLS/RU/RRA/MSA/DG/LSI)
  table_ls.csv         greedy-versus-GLS objective values and LS iterations
  certificates.csv     bound certificates emitted by the solvers
  history_*.csv/.png   per-iteration utility of the joint algorithms
  figures/*.png        rendered figures alongside the delimited output
  runlog.json          wall times (deliberately outside the deterministic CSVs)

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .model import (InstanceError, ScenarioConfig, UtilityConfig,
                    generate_topology, load_instance, scenario_from_dict,
                    scenario_to_dict, uniform_weights)
from .rate import rate_matrix, theta_matrix
from .gls import GlsConfig, gls, greedy_stage, g_value_of
from .distsim import DistLsConfig, distributed_greedy, distributed_ls
from .joint import (JointConfig, joint_gls_af, joint_ra_af,
                    max_snr_association, relaxed_association, round_association,
                    utility_score)
from .afopt import AfConfig, AfError
from .convex import InfeasibleStartError
from . import plots

ALGORITHMS = ("greedy", "gls", "dg", "dls", "ru", "rra", "msa",
              "joint-gls-af", "joint-ra-af")
_LABELS = {"greedy": "Greedy", "gls": "GLS", "ru": "RU", "rra": "RRA",
           "msa": "MSA", "dg": "DG", "dls": "DLS",
           "joint-gls-af": "Joint-GLS-AF", "joint-ra-af": "Joint-RA-AF"}


class ConfigError(ValueError):
    pass


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def export_rate_matrix(path, rates):
    """Dump a conservative rate matrix as CSV (one row per user)."""
    R = rates.rates
    _write_csv(path, ["user"] + [f"tp{b}" for b in range(R.shape[1])],
               [[k] + [float(v) for v in R[k]] for k in range(R.shape[0])])


def export_price_history(path, history):
    """Dump a distributed-AF price history: (outer, price_iter, consensus_gap)."""
    _write_csv(path, ["outer", "price_iter", "consensus_gap"],
               [[int(o), int(i), float(g)] for o, i, g in history])


def export_frame_rates(path, frames):
    """Dump per-frame user rate vectors (one row per frame)."""
    frames = [np.asarray(f, dtype=float) for f in frames]
    K = frames[0].shape[0]
    _write_csv(path, ["frame"] + [f"user{k}" for k in range(K)],
               [[i] + [float(v) for v in f] for i, f in enumerate(frames)])


def _load_inputs(manifest, seed):
    if manifest.get("instance"):
        topo, gains, util0 = load_instance(manifest["instance"])
        weights = util0.weights
        base_alpha = util0.alpha
    else:
        scen = scenario_from_dict(dict(manifest["scenario"]))
        scen.rng_seed = seed
        topo, gains = generate_topology(scen)
        weights = uniform_weights(topo.num_users)
        base_alpha = None
    return topo, gains, weights, base_alpha


def run(manifest, out_dir):
    """Execute the experiment grid described by a manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    alphas = list(manifest["alphas"])
    algos = list(manifest["algos"])
    seeds = list(manifest["seeds"])
    delta = float(manifest.get("delta", 0.0))
    mc_samples = int(manifest.get("mc_samples", 0))
    for algo in algos:
        if algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {algo!r} "
                              f"(choose from {', '.join(ALGORITHMS)})")
    if not alphas or not algos:
        raise ConfigError("alpha and algorithm lists must be nonempty")

    gls_cfg = GlsConfig(delta=delta)
    results, cert_rows, timings = [], [], []
    series = {}
    table_rows = {}
    ls_rows = {}

    for seed in seeds:
        topo, gains, weights, _ = _load_inputs(manifest, seed)
        mc = mc_samples if gains.fading_model != "none" else 0
        af_cfg = AfConfig(mc_samples=mc_samples or 1000, rng_seed=seed)
        if manifest.get("export_rates"):
            export_rate_matrix(out / f"rates_seed{seed}.csv",
                               rate_matrix(gains, np.ones(topo.num_tps),
                                           mc_samples=mc, seed=seed))
        for alpha in alphas:
            util = UtilityConfig(alpha=float(alpha), weights=weights)
            rates = rate_matrix(gains, np.ones(topo.num_tps), mc_samples=mc, seed=seed)
            gm = theta_matrix(rates, util)
            cell = table_rows.setdefault(alpha, {})
            for algo in algos:
                t0 = time.perf_counter()
                utility = gval = float("nan")
                iterations = 0
                converged = True
                if algo == "greedy":
                    assoc, _ = greedy_stage(gm)
                    gval = g_value_of(assoc, gm)
                    utility = utility_score(gval, util.alpha)
                elif algo == "gls":
                    res = gls(gm, gls_cfg)
                    gval = res.g_final
                    utility = utility_score(gval, util.alpha)
                    iterations = res.ls_stats.iterations
                    for cert in res.certificates:
                        cert_rows.append([alpha, algo, seed, cert.bound_kind,
                                          cert.g_solution, cert.bound_value,
                                          cert.h_value, cert.omega_tilde_size,
                                          cert.delta])
                    cell["Greedy_g"] = res.g_greedy
                    cell["GLS_g"] = res.g_final
                    cell["LSI"] = iterations
                elif algo == "dg":
                    assoc, trace = distributed_greedy(gm, seed=seed)
                    gval = g_value_of(assoc, gm)
                    utility = utility_score(gval, util.alpha)
                    iterations = trace.windows_used
                elif algo == "dls":
                    assoc0, _ = distributed_greedy(gm, seed=seed)
                    cfg = DistLsConfig(delta=delta, rng_seed=seed,
                                       max_windows=10 * topo.num_users)
                    assoc, trace = distributed_ls(assoc0, gm, cfg)
                    gval = g_value_of(assoc, gm)
                    utility = utility_score(gval, util.alpha)
                    iterations = trace.windows_used
                    converged = trace.converged
                elif algo == "ru":
                    relaxed = relaxed_association(rates, util)
                    gval = relaxed.certified_bound
                    utility = utility_score(gval, util.alpha)
                elif algo == "rra":
                    relaxed = relaxed_association(rates, util)
                    assoc = round_association(relaxed)
                    gval = g_value_of(assoc, gm)
                    utility = utility_score(gval, util.alpha)
                elif algo == "msa":
                    assoc = max_snr_association(gains)
                    gval = g_value_of(assoc, gm)
                    utility = utility_score(gval, util.alpha)
                elif algo in ("joint-gls-af", "joint-ra-af"):
                    jc = JointConfig()
                    if algo == "joint-gls-af":
                        jres = joint_gls_af(gains, util, gls_cfg, af_cfg, jc)
                    else:
                        jres = joint_ra_af(gains, util, af_cfg, jc)
                    utility = jres.records[-1].score
                    gval = utility if util.alpha <= 1 else -utility
                    iterations = jres.records[-1].round
                    _write_history(out, algo, alpha, seed, jres.records)
                timings.append({"alpha": alpha, "algorithm": algo, "seed": seed,
                                "seconds": time.perf_counter() - t0})
                results.append([alpha, algo, seed, utility, gval, iterations,
                                converged])
                series.setdefault(_LABELS[algo], []).append((float(alpha), utility))
                cell[_LABELS[algo]] = utility
            if "Greedy_g" in cell:
                ls_rows[alpha] = [alpha, cell["Greedy_g"], cell["GLS_g"],
                                  cell.get("LSI", 0)]

    _write_csv(out / "results.csv",
               ["alpha", "algorithm", "seed", "utility", "gvalue", "iterations",
                "converged"], results)
    header = ["alpha", "Greedy", "GLS", "RU", "RRA", "MSA", "DG", "LSI"]
    rows = []
    for alpha in alphas:
        cell = table_rows.get(alpha, {})
        rows.append([alpha] + [cell.get(col, "") for col in header[1:]])
    _write_csv(out / "table_utilities.csv", header, rows)
    _write_csv(out / "table_ls.csv", ["alpha", "Greedy", "GLS", "LSI"],
               [ls_rows[a] for a in alphas if a in ls_rows])
    _write_csv(out / "certificates.csv",
               ["alpha", "algorithm", "seed", "bound_kind", "g_solution",
                "bound_value", "h_value", "omega_tilde_size", "delta"], cert_rows)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "runlog.json", "w") as fh:
        json.dump({"version": __version__, "timings": timings}, fh, indent=2)
        fh.write("\n")
    if series:
        plots.save_utility_vs_alpha(series, out / "figures" / "utility_vs_alpha.png")
    return out


def _history_rows(records):
    return [{"round": r.round, "stage": r.stage, "score": r.score,
             "accepted": r.accepted, "rounded_score": r.rounded_score}
            for r in records]


def _write_history(out, algo, alpha, seed, records):
    stem = f"history_{algo}_alpha{alpha}_seed{seed}"
    rows = _history_rows(records)
    _write_csv(out / f"{stem}.csv",
               ["round", "stage", "score", "accepted", "rounded_score"],
               [[r["round"], r["stage"], r["score"], r["accepted"],
                 "" if r["rounded_score"] is None else r["rounded_score"]]
                for r in rows])
    plots.save_history(rows, out / "figures" / f"{stem}.png",
                       title=f"{algo}, alpha={alpha}, seed={seed}")


def plot_history(history_csvs, out_dir):
    """Render figures for existing history CSVs (CSV stays the source of truth)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in history_csvs:
        path = Path(path)
        rows = []
        with open(path) as fh:
            for rec in csv.DictReader(fh):
                rows.append({"round": int(rec["round"]), "stage": rec["stage"],
                             "score": float(rec["score"]),
                             "rounded_score": float(rec["rounded_score"])
                             if rec.get("rounded_score") else None})
        target = out / (path.stem + ".png")
        plots.save_history(rows, target, title=path.stem)
        written.append(target)
    return written


def _load_scenario_file(path):
    text = Path(path).read_text()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # python 3.10
            raise ConfigError("TOML scenarios need python >= 3.11; use JSON")
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)
    return doc


def _parse_list(text, cast):
    return [cast(part) for part in text.split(",") if part]


def build_parser():
    parser = argparse.ArgumentParser(prog="hetnetopt",
                                     description="HetNet association and "
                                                 "activation-fraction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid")
    p_run.add_argument("--scenario", help="scenario config file (JSON or TOML)")
    p_run.add_argument("--instance", help="instance file (JSON)")
    p_run.add_argument("--alpha", default="1.0", help="comma list of alphas")
    p_run.add_argument("--algos", default="gls,msa", help="comma list of algorithms")
    p_run.add_argument("--seeds", default="0", help="comma list of seeds")
    p_run.add_argument("--delta", type=float, default=0.0)
    p_run.add_argument("--mc-samples", type=int, default=0)
    p_run.add_argument("--export-rates", action="store_true",
                       help="also dump the conservative rate matrix per seed")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--from-manifest", help="rerun a previous manifest.json")

    p_plot = sub.add_parser("plot-history", help="render history CSVs to figures")
    p_plot.add_argument("files", nargs="+")
    p_plot.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            if args.from_manifest:
                with open(args.from_manifest) as fh:
                    manifest = json.load(fh)
            else:
                manifest = {
                    "alphas": _parse_list(args.alpha, float),
                    "algos": _parse_list(args.algos, str),
                    "seeds": _parse_list(args.seeds, int),
                    "delta": args.delta,
                    "mc_samples": args.mc_samples,
                    "export_rates": bool(args.export_rates),
                    "version": __version__,
                }
                if args.instance:
                    manifest["instance"] = args.instance
                elif args.scenario:
                    manifest["scenario"] = _load_scenario_file(args.scenario)
                else:
                    manifest["scenario"] = scenario_to_dict(ScenarioConfig())
            run(manifest, args.out)
            return 0
        if args.command == "plot-history":
            plot_history(args.files, args.out)
            return 0
        return 2
    except (ConfigError, InstanceError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (AfError, InfeasibleStartError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
