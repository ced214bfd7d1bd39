"""Command line entry point: ``pdsl run | analyze | topology``."""

from __future__ import annotations

import argparse
import logging
import math
import sys

from . import analysis
from .experiment import ConfigError, load_config, run_experiment
from .topology import KINDS, TopologyError, build_topology, spectral_info

# flag name -> config key; every flag defaults to None so unset flags don't override the file
RUN_FLAGS = {
    "dataset": str, "topology": str, "agents": int, "rounds": int, "batch": int,
    "alpha": float, "gamma": float, "mu": float, "epsilon": float, "delta": float,
    "clip": float, "sigma": float, "phi-min": float, "shapley": str,
    "mc-permutations": int, "algo": str, "seed": int, "out": str, "workers": int,
    "model": str, "hidden": int, "classes": int, "dim": int, "n-train": int,
    "n-test": int, "separation": float, "val-fraction": float, "mnist-dir": str,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdsl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a training run and write a metrics CSV")
    run.add_argument("--config", help="key=value config file; flags override it")
    for flag, kind in RUN_FLAGS.items():
        run.add_argument(f"--{flag}", type=kind, default=None)

    an = sub.add_parser("analyze", help="evaluate the learning-rate window, bound and round count")
    an.add_argument("--L", type=float, default=1.0)
    an.add_argument("--zeta", type=float, default=0.0)
    an.add_argument("--kappa", type=float, default=0.0)
    an.add_argument("--rho", type=float, default=None, help="defaults to the value for --topology/--agents")
    an.add_argument("--omega-min", type=float, default=None, help="defaults to the value for --topology/--agents")
    an.add_argument("--topology", choices=KINDS, default="ring")
    an.add_argument("--agents", type=int, default=8)
    an.add_argument("--alpha", type=float, default=0.5)
    an.add_argument("--gamma", type=float, default=0.001)
    an.add_argument("--sigma", type=float, default=0.0)
    an.add_argument("--clip", type=float, default=1.0)
    an.add_argument("--dim", type=int, default=1)
    an.add_argument("--f-gap", type=float, default=1.0)
    an.add_argument("--T", type=int, default=1000)

    topo = sub.add_parser("topology", help="print a mixing matrix as CSV")
    topo.add_argument("--kind", choices=KINDS, default="ring")
    topo.add_argument("--agents", type=int, default=8)
    topo.add_argument("--out", default="-")
    topo.add_argument("--spectrum", action="store_true", help="also print rho and eigenvalues to stderr")
    return p


def _cmd_run(args) -> int:
    overrides = {flag.replace("-", "_"): getattr(args, flag.replace("-", "_")) for flag in RUN_FLAGS}
    cfg = load_config(args.config, overrides)
    run_experiment(cfg)
    return 0


def _cmd_analyze(args) -> int:
    rho, omega_min = args.rho, args.omega_min
    if rho is None or omega_min is None:
        g = build_topology(args.topology, args.agents)
        rho = spectral_info(g).rho if rho is None else rho
        omega_min = g.omega_min if omega_min is None else omega_min
    c = analysis.TheoryConstants(
        L=args.L, zeta=args.zeta, kappa=args.kappa, rho=rho, alpha=args.alpha, gamma=args.gamma,
        sigma=args.sigma, clip_c=args.clip, d=args.dim, m=args.agents, omega_min=omega_min,
        f_gap=args.f_gap,
    )
    b = analysis.lr_bounds(c)
    print(f"rho = {rho!r}")
    print(f"omega_min = {omega_min!r}")
    print(f"lr_lower = {b.lower!r}")
    print(f"lr_upper = {b.upper!r}")
    if b.window is None:
        print(f"lr_window = empty{' (' + b.reason + ')' if b.reason else ''}")
    else:
        print(f"lr_window = ({b.lower!r}, {b.upper!r}]")
    try:
        print(f"convergence_bound(T={args.T}) = {analysis.convergence_bound(c, args.T)!r}")
    except analysis.TheoremHypothesisError as exc:
        print(f"convergence_bound(T={args.T}) = n/a ({exc})")
    t_min = analysis.min_rounds(c)
    print(f"min_rounds = {'unbounded' if t_min == math.inf else t_min}")
    return 0


def _cmd_topology(args) -> int:
    g = build_topology(args.kind, args.agents)
    text = g.to_csv()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    if args.spectrum:
        info = spectral_info(g)
        print(f"rho = {info.rho!r}", file=sys.stderr)
        print("eigenvalues = " + ",".join(repr(float(v)) for v in info.eigenvalues), file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "analyze": _cmd_analyze, "topology": _cmd_topology}[args.command]
    try:
        return handler(args)
    except (ConfigError, TopologyError, analysis.TheoremHypothesisError) as exc:
        print(f"pdsl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
