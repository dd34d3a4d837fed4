"""
Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .clt import DEFAULT_MARGIN, DEFAULT_NODES, DEFAULT_V0, clt_parameters, parse_phi
from .errors import NumericalError, WignerLabError
from .experiments import (
    LOCAL_LAW_SIZES,
    ExperimentConfig,
    local_law_probe,
    persist,
    run_clt_experiment,
    write_samples_csv,
)
from .freeconv import density, support_edges
from .measures import check_regularity, parse_measure
from .rmt_sim import EnsembleConfig, EntryDistribution, sample_diagonal, simulate_spectrum, write_spectra_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULTS = {
    "theta": 0.0,
    "w2": 2.0,
    "w4": 3.0,
    "phi": "poly:0,0,1",
    "n": 400,
    "replicas": 1000,
    "seed": 0,
    "statistic": "T",
    "v_mode": "quantile",
    "margin": DEFAULT_MARGIN,
    "v0": DEFAULT_V0,
    "nodes": DEFAULT_NODES,
    "varpi": 0.1,
    "eta": 1e-9,
    "points": 201,
    "replicas_locallaw": 20,
    "z": "2j",
    "sizes": ",".join(str(n) for n in LOCAL_LAW_SIZES),
}


class UsageError(WignerLabError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> float:
    """Round to 9 significant digits for printing."""
    return float(f"{x:.9g}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--config", help="TOML file of key = value settings; flags override it")
    g.add_argument("--measure", help="deformation law: two_point:a | uniform:a | discrete:PATH")
    g.add_argument("--theta", type=float, help="coupling theta >= 0 (default 0)")
    g.add_argument("--varpi", type=float, help="regularity margin (default 0.1)")
    g.add_argument("--out", help="write the result here instead of stdout")

    clt = argparse.ArgumentParser(add_help=False)
    g = clt.add_argument_group("limits")
    g.add_argument("--w2", type=float, help="variance of diagonal Wigner entries (default 2)")
    g.add_argument("--w4", type=float, help="fourth moment of off-diagonal entries (default 3)")
    g.add_argument("--phi", help="test function: poly:c0,c1,... | bump:center,halfwidth,amplitude")
    g.add_argument("--margin", type=float, help="contour distance from the support edges (default 0.5)")
    g.add_argument("--v0", type=float, help="contour half height (default 0.5)")
    g.add_argument("--nodes", type=int, help="Gauss-Legendre nodes per contour side (default 64)")

    sim = argparse.ArgumentParser(add_help=False)
    g = sim.add_argument_group("simulation")
    g.add_argument("--n", type=int, help="matrix size N (default 400)")
    g.add_argument("--replicas", type=int, help="number of Monte Carlo replicas")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--v-mode", dest="v_mode", choices=["quantile", "iid"], help="diagonal: deterministic quantiles or iid draws")
    g.add_argument("--entry", choices=["gaussian", "rademacher", "fourth_moment"],
                   help="entry law; inferred from --w4 when omitted (3: gaussian, 1: rademacher, else fourth_moment)")
    g.add_argument("--workers", type=int, help="worker threads (capped by WIGNERLAB_THREADS)")

    parser = _Parser(prog="wignerlab", description="Deformed Wigner matrices: limits and Monte Carlo checks.")
    parser.add_argument("--version", action="version", version=f"wignerlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("density", parents=[common], help="density curve as CSV (E,rho)")
    p.add_argument("--emin", type=float, help="left end of the grid (default: edge - 0.25)")
    p.add_argument("--emax", type=float, help="right end of the grid (default: edge + 0.25)")
    p.add_argument("--points", type=int, help="grid size (default 201)")
    p.add_argument("--eta", type=float, help="imaginary part floor (default 1e-9)")

    sub.add_parser("edges", parents=[common], help="support endpoints L- and L+")
    sub.add_parser("clt-params", parents=[common, clt], help="limiting mean and variances as JSON")

    p = sub.add_parser("simulate", parents=[common, clt, sim], help="Monte Carlo run, JSON summary")
    p.add_argument("--statistic", choices=["T", "S"], help="T: deterministic-diagonal statistic, S: normalized random-diagonal statistic")
    p.add_argument("--samples-out", help="CSV dump replica,value")
    p.add_argument("--spectra-out", help="CSV dump replica,index,lambda")

    p = sub.add_parser("verify", parents=[common, clt, sim], help="Monte Carlo run with pass/fail lines")
    p.add_argument("--statistic", choices=["T", "S"], help="T or S (default T)")

    p = sub.add_parser("locallaw", parents=[common, clt, sim], help="resolvent-trace deviation vs N")
    p.add_argument("--z", help="comma-separated probe points, e.g. 2j,0.5+1j (default 2j)")
    p.add_argument("--sizes", help="comma-separated matrix sizes (default 250,500,1000,2000)")
    return parser


def _settings(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                cfg = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"bad config {args.config}: {exc}") from exc
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    flags = {k: v for k, v in vars(args).items() if v is not None}
    merged = {**DEFAULTS, **cfg, **flags}
    if "measure" not in merged:
        raise UsageError("--measure is required")
    if args.command == "locallaw" and "replicas" not in cfg and "replicas" not in flags:
        merged["replicas"] = DEFAULTS["replicas_locallaw"]
    return merged


def _entry(s) -> EntryDistribution:
    kind = s.get("entry")
    w4 = float(s["w4"])
    if kind is None:
        kind = {3.0: "gaussian", 1.0: "rademacher"}.get(w4, "fourth_moment")
    entry = EntryDistribution(kind, float(s["w2"]), w4 if kind == "fourth_moment" else None)
    if entry.W4 != w4:
        raise UsageError(f"entry law {kind} has W4 = {entry.W4:g}, but --w4 {w4:g} was requested")
    return entry


def _ensemble(s, measure):
    return EnsembleConfig(int(s["n"]), float(s["theta"]), measure, s["v_mode"], _entry(s), int(s["seed"]))


def _experiment(s, measure):
    return ExperimentConfig(
        ensemble=_ensemble(s, measure),
        phi=parse_phi(s["phi"]),
        replicas=int(s["replicas"]),
        statistic=s["statistic"],
        varpi=float(s["varpi"]),
        margin=float(s["margin"]),
        v0=float(s["v0"]),
        nodes=int(s["nodes"]),
    )


def _emit(text: str, s) -> None:
    out = s.get("out")
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_density(s, measure):
    theta = float(s["theta"])
    edges = support_edges(measure, theta)
    lo = float(s.get("emin", edges.L_minus - 0.25))
    hi = float(s.get("emax", edges.L_plus + 0.25))
    E = np.linspace(lo, hi, int(s["points"]))
    rho = density(measure, theta, E, eta_floor=float(s["eta"]))
    lines = ["E,rho"] + [f"{e:.9g},{r:.9g}" for e, r in zip(E, rho)]
    _emit("\n".join(lines) + "\n", s)


def _cmd_edges(s, measure):
    e = support_edges(measure, float(s["theta"]))
    _emit(f"L- = {e.L_minus:.9f} L+ = {e.L_plus:.9f}\n", s)


def _cmd_clt_params(s, measure):
    phi = parse_phi(s["phi"])
    theta = float(s["theta"])
    p = clt_parameters(phi, measure, theta, float(s["w2"]), float(s["w4"]),
                       float(s["margin"]), float(s["v0"]), int(s["nodes"]))
    record = {
        "measure": measure.label(),
        "theta": theta,
        "w2": float(s["w2"]),
        "W4": float(s["w4"]),
        "phi": phi.label(),
        "M": _fmt(p.M_phi),
        "V": _fmt(p.V_phi),
        "Vtilde": None if p.Vtilde_phi is None else _fmt(p.Vtilde_phi),
        "quad_error": _fmt(p.quad_error),
    }
    _emit(json.dumps(record, sort_keys=True) + "\n", s)


def _cmd_simulate(s, measure):
    config = _experiment(s, measure)
    summary, samples = run_clt_experiment(config, workers=s.get("workers"), return_samples=True)
    if s.get("samples_out"):
        write_samples_csv(s["samples_out"], samples)
    if s.get("spectra_out"):
        ens = config.ensemble
        write_spectra_csv(s["spectra_out"],
                          ((r, simulate_spectrum(ens, r, sample_diagonal(ens, r))) for r in range(config.replicas)))
    if s.get("out"):
        persist(summary, s["out"])
    else:
        sys.stdout.write(json.dumps(asdict(summary), indent=2, sort_keys=True) + "\n")


def _cmd_verify(s, measure):
    report = check_regularity(measure, float(s["varpi"]))
    if not report.ok:
        raise UsageError(
            f"measure {measure.label()} violates the regularity assumption "
            f"(inf_x int (v-x)^-2 dnu(v) = {report.g_min:.6g} < 1 + varpi = {1 + float(s['varpi']):.6g})"
        )
    config = _experiment(s, measure)
    summary = run_clt_experiment(config, workers=s.get("workers"))
    lines = [
        f"statistic {summary.statistic}  N={summary.N}  M={summary.replicas}  phi={summary.phi}  "
        f"measure={summary.measure}  theta={summary.theta:g}",
        f"sample mean {summary.sample_mean:.9g} (se {summary.se_mean:.3g})  theory {summary.theory_M}",
        f"sample var  {summary.sample_var:.9g} (se {summary.se_var:.3g})  theory {summary.theory_V}",
    ]
    lines += [f"{name:10s} {verdict.upper()}" for name, verdict in summary.verdicts.items()]
    lines += [f"note: {n}" for n in summary.notes]
    lines.append("overall    " + ("PASS" if summary.passed else "FAIL"))
    _emit("\n".join(lines) + "\n", s)
    if s.get("out"):
        persist(summary, s["out"] + ".json")


def _parse_points(text):
    try:
        return [complex(tok.strip().replace("i", "j")) for tok in str(text).split(",")]
    except ValueError as exc:
        raise UsageError(f"bad complex list {text!r}") from exc


def _cmd_locallaw(s, measure):
    sizes = tuple(int(tok) for tok in str(s["sizes"]).split(","))
    table = local_law_probe(_ensemble(s, measure), _parse_points(s["z"]), int(s["replicas"]),
                            sizes=sizes, workers=s.get("workers"))
    lines = ["N,z,median_abs_deviation"]
    lines += [f"{n},{z.real:.9g}{z.imag:+.9g}j,{med:.9g}" for n, z, med in table.rows]
    lines += [f"# slope {z.real:.9g}{z.imag:+.9g}j {sl:.9g}" for z, sl in table.slopes.items()]
    _emit("\n".join(lines) + "\n", s)


COMMANDS = {
    "density": (_cmd_density, "density"),
    "edges": (_cmd_edges, "support_edges"),
    "clt-params": (_cmd_clt_params, "clt_parameters"),
    "simulate": (_cmd_simulate, "run_clt_experiment"),
    "verify": (_cmd_verify, "run_clt_experiment"),
    "locallaw": (_cmd_locallaw, "local_law_probe"),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler, op = COMMANDS[args.command]
    try:
        s = _settings(args)
        measure = parse_measure(str(s["measure"]))
        handler(s, measure)
    except NumericalError as exc:
        print(f"wignerlab: numerical failure in {op}: {exc}", file=sys.stderr)
        return 2
    except (WignerLabError, ValueError, OSError) as exc:
        print(f"wignerlab: error: {exc}", file=sys.stderr)
        return 1
    return 0
