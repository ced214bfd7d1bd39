"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are written
even when pytest captures output.
"""

import io
import itertools
import math
import time

import numpy as np
import pytest
from scipy import stats

from pdsl.analysis import TheoryConstants, convergence_bound, lr_bounds, lr_window, min_rounds
from pdsl.data import synth_classification
from pdsl.engine import EngineConfig, Simulation
from pdsl.experiment import RunConfig, build_simulation, run_experiment
from pdsl.model import ModelSpec, loss_and_grad
from pdsl.privacy import calibrate_sigma, clip_gradient, gaussian_perturb
from pdsl.rng import substream
from pdsl.shapley import TabularGame, exact_shapley, mc_shapley
from pdsl.topology import KINDS, TopologyError, build_topology, spectral_info, validate


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  criterion {number} ({title}): {detail}")
        assert ok, detail

    return emit


def random_table(players, rng):
    return {frozenset(c): rng.uniform()
            for k in range(1, len(players) + 1) for c in itertools.combinations(players, k)}


def permutation_oracle(players, table):
    v = lambda s: table.get(frozenset(s), 0.0)
    phi = dict.fromkeys(players, 0.0)
    perms = list(itertools.permutations(players))
    for perm in perms:
        for k, p in enumerate(perm):
            phi[p] += v(perm[: k + 1]) - v(perm[:k])
    return {p: s / len(perms) for p, s in phi.items()}


def marginal_std(players, table):
    v = lambda s: table.get(frozenset(s), 0.0)
    contrib = {p: [] for p in players}
    for perm in itertools.permutations(players):
        for k, p in enumerate(perm):
            contrib[p].append(v(perm[: k + 1]) - v(perm[:k]))
    return {p: float(np.std(c)) for p, c in contrib.items()}


def test_criterion_1_shapley_correctness(report):
    start = time.perf_counter()
    worst_oracle = worst_balance = worst_sym = worst_zero = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        players = list(range(3 + seed % 2))
        table = random_table(players, rng)
        phi = exact_shapley(TabularGame(players, table))
        oracle = permutation_oracle(players, table)
        worst_oracle = max(worst_oracle, max(abs(phi[p] - oracle[p]) for p in players))
        worst_balance = max(worst_balance, abs(math.fsum(phi.values()) - table[frozenset(players)]))
        # symmetry: make players 0 and 1 interchangeable
        sym = dict(table)
        for s in list(sym):
            if 0 in s and 1 not in s:
                sym[s - {0} | {1}] = sym[s]
        phi_s = exact_shapley(TabularGame(players, sym))
        worst_sym = max(worst_sym, abs(phi_s[0] - phi_s[1]))
        # zero element: the last player adds nothing to any coalition
        dummy = players[-1]
        zero = {s: (table[s - {dummy}] if s - {dummy} else 0.0) for s in table}
        worst_zero = max(worst_zero, abs(exact_shapley(TabularGame(players, zero))[dummy]))
    elapsed = time.perf_counter() - start
    ok = worst_oracle <= 1e-9 and max(worst_balance, worst_sym, worst_zero) <= 1e-12 and elapsed < 5
    report(1, "Shapley correctness", ok,
           f"oracle err {worst_oracle:.2e}, balance {worst_balance:.2e}, symmetry {worst_sym:.2e}, "
           f"zero {worst_zero:.2e} on 1000 games in {elapsed:.2f}s")


def test_criterion_2_monte_carlo(report):
    start = time.perf_counter()
    players = [0, 1, 2, 3]
    worst_balance = 0.0
    for seed, r in itertools.product(range(20), (1, 2, 3, 7, 50, 333)):
        rng = np.random.default_rng(seed)
        table = random_table(players, rng)
        phi = mc_shapley(TabularGame(players, table), r, rng)
        worst_balance = max(worst_balance, abs(math.fsum(phi.values()) - table[frozenset(players)]))
    r, within = 5000, 0
    for trial in range(200):
        table = random_table(players, substream(trial, "game"))
        exact = exact_shapley(TabularGame(players, table))
        sd = marginal_std(players, table)
        phi = mc_shapley(TabularGame(players, table), r, substream(trial, "perms"))
        mae = np.mean([abs(phi[p] - exact[p]) for p in players])
        se = np.mean([sd[p] for p in players]) / math.sqrt(r)
        within += mae < 3 * se
    elapsed = time.perf_counter() - start
    ok = worst_balance <= 1e-12 and within >= 198 and elapsed < 30
    report(2, "Monte Carlo estimator", ok,
           f"balance err {worst_balance:.2e}; MAE < 3 SE in {within}/200 trials at r=5000; {elapsed:.1f}s")


def test_criterion_3_dp_mechanism(report):
    rng = np.random.default_rng(0)
    vecs = rng.standard_normal((10**6, 8)) * rng.lognormal(0.0, 2.0, (10**6, 1))
    thresholds = rng.uniform(0.01, 10.0, 10**6)
    clipped = np.stack([clip_gradient(v, c) for v, c in zip(vecs, thresholds)])
    batched = np.linalg.norm(clipped, axis=1)
    dotted = np.sqrt(np.einsum("ij,ij->i", clipped, clipped))
    clip_ok = bool(np.all(batched <= thresholds) and np.all(dotted <= thresholds))
    sigma = 2.5
    noise = gaussian_perturb(np.zeros(10**5), sigma, substream(0, "ks"))
    std_err = abs(noise.std() / sigma - 1)
    p_value = stats.kstest(noise, "norm", args=(0.0, sigma)).pvalue
    full2 = build_topology("full", 2)
    sig = calibrate_sigma(full2, 1.0, 1e-5, 1.0, 0.5)
    hand = 12 * math.sqrt(2 * math.log(1.25e5)) / (0.5 * math.sqrt(8))
    scale = calibrate_sigma(full2, 0.25, 1e-5, 3.0, 0.5) / sig
    ok = clip_ok and std_err < 0.005 and p_value > 0.01 and abs(sig - hand) <= 1e-9 and abs(scale - 12) <= 1e-9
    report(3, "DP mechanism", ok,
           f"clip invariant {'holds' if clip_ok else 'broken'} on 1e6 vectors; std off by {std_err:.3%}; "
           f"KS p={p_value:.3f}; sigma(full,2)={sig:.12f}; C/eps scaling x{scale:.12f}")


def test_criterion_4_mixing_matrices(report):
    built = failed = 0
    for kind, m in itertools.product(KINDS, range(2, 21)):
        try:
            g = build_topology(kind, m)
        except TopologyError:
            continue
        built += 1
        failed += not all(c.passed for c in validate(g))
    ring4 = spectral_info(build_topology("ring", 4)).rho
    full = max(spectral_info(build_topology("full", m)).rho for m in range(2, 21))
    ok = failed == 0 and abs(ring4 - 1 / 9) <= 1e-9 and full <= 1e-12
    report(4, "Mixing matrices", ok,
           f"{built} graphs built, {failed} failed checks; ring m=4 rho={ring4!r}; max full rho={full:.1e}")


def test_criterion_5_engine_identities(report):
    def sim(estimator):
        train = synth_classification(3, 10, 1000, 3.0, substream(0, "train"))
        val = synth_classification(3, 10, 200, 3.0, substream(0, "val"))
        from pdsl.data import dirichlet_partition
        shards = dirichlet_partition(train, 8, 0.25, substream(0, "partition"))
        cfg = EngineConfig(sigma=1.5, shapley=estimator, seed=0)
        return Simulation(build_topology("ring", 8), ModelSpec("softmax_regression", 10, 3), train, shards, val, cfg)

    a, b = sim("exact"), sim("mc_exhaustive")
    worst_ident = worst_swap = 0.0
    for _ in range(20):
        U0 = np.stack([s.u for s in a.agents])
        X0 = np.stack([s.x for s in a.agents])
        art = a.pdsl_round()
        b.pdsl_round()
        U1 = np.stack([s.u for s in a.agents])
        X1 = np.stack([s.x for s in a.agents])
        ubar = np.max(np.abs(U1.mean(0) - (0.5 * U0.mean(0) + art.g_bar.mean(0))))
        xbar = np.max(np.abs(X1.mean(0) - (X0.mean(0) - 0.05 * U1.mean(0))))
        worst_ident = max(worst_ident, ubar, xbar)
        worst_swap = max(worst_swap, *(np.max(np.abs(p.x - q.x)) for p, q in zip(a.agents, b.agents)))
    ok = worst_ident <= 1e-9 and worst_swap <= 1e-12
    report(5, "Engine identities", ok,
           f"max mean-recursion residual {worst_ident:.2e}; exact vs exhaustive MC gap {worst_swap:.2e}")


def test_criterion_6_convergence(report):
    start = time.perf_counter()
    base = RunConfig(rounds=300, phi_min=0.25, epsilon=1.0, clip=1.0)
    reductions, wins, lines = [], 0, []
    for seed in range(5):
        pdsl = build_simulation(RunConfig(**{**base.__dict__, "seed": seed})).run(300, "pdsl")
        dpsgd = build_simulation(RunConfig(**{**base.__dict__, "seed": seed, "algo": "dpsgd"})).run(300, "dpsgd")
        drop = 1 - pdsl[-1].global_loss / pdsl[0].global_loss
        reductions.append(drop)
        wins += pdsl[-1].test_accuracy >= dpsgd[-1].test_accuracy
        lines.append(f"seed {seed}: loss {pdsl[0].global_loss:.2f}->{pdsl[-1].global_loss:.2f}, "
                     f"acc pdsl {pdsl[-1].test_accuracy:.3f} vs dpsgd {dpsgd[-1].test_accuracy:.3f}")
    elapsed = time.perf_counter() - start
    sigma = pdsl[-1].sigma_used
    ok_a = all(r >= 0.5 for r in reductions)
    ok_b = wins >= 4 and elapsed < 120
    detail = f"sigma={sigma:.4f}; " + "; ".join(lines)
    try:
        report("6(b)", "PDSL accuracy >= DP-DPSGD", ok_b, f"{wins}/5 seeds, {elapsed:.1f}s total")
    finally:
        report("6(a)", "loss drops >= 50% from round 1", ok_a,
               "drops " + ", ".join(f"{r:+.0%}" for r in reductions) + f"; {detail}")


def test_criterion_7_single_agent_reduction(report):
    train = synth_classification(3, 4, 200, 2.0, substream(9, "train"))
    spec = ModelSpec("mlp1", 4, 3, hidden=6)
    cfg = EngineConfig(alpha=0.8, gamma=0.05, batch_size=10, clip_c=math.inf, sigma=0.0, seed=9)
    sim = Simulation(build_topology("full", 1), spec, train, [np.arange(200)], train, cfg)
    x, u = sim.agents[0].x.copy(), np.zeros(spec.dim)
    order, epoch, worst = [], 0, 0.0
    for _ in range(100):
        sim.pdsl_round()
        if not order:
            order = list(substream(9, "batch", 0, epoch).permutation(200))
            epoch += 1
        idx, order = order[:10], order[10:]
        _, g = loss_and_grad(spec, x, train.features[idx], train.labels[idx])
        u = 0.8 * u + g
        x = x - 0.05 * u
        worst = max(worst, float(np.max(np.abs(sim.agents[0].x - x))))
    report(7, "Single-agent reduction", worst <= 1e-12, f"max deviation from heavy-ball loop {worst:.2e} over 100 rounds")


CHECKS = [
    # (alpha, rho, L) lr window; (lower, upper) from a 40-digit evaluation
    ("lr", (0.5, 0.0, 1.0), (0.5, 0.0490290337845460079810)),
    ("lr", (0.9, 1 / 9, 2.0), (0.0111111111111111059, 0.00308349338199144414)),
    ("lr", (0.99, 0.25, 0.5), (0.000101010101010101190, 0.0000504382379675948690)),
    ("bound", (2, 0.3, 0.2, 1 / 9, 0.9, 0.05, 0.5, 1, 10, 8, 1 / 3, 1.5, 100), 47399.064107142874938),
    ("bound", (1, 1, 0.5, 0.25, 0.7, 0.2, 2, 0.5, 33, 4, 0.25, 3, 1000), 4718985.6252000015218),
    ("bound", (0.5, 0, 0, 0, 0.95, 0.01, 0, 1, 5, 2, 0.5, 2, 10), 674.98857142857066212),
    ("rounds", (0.9, 1 / 9, 2.0), 105176),
    ("rounds", (0.7, 0.25, 1.0), 4623),
    ("rounds", (0.95, 0.0, 0.5), 587955),
]

KEYS = ("L", "zeta", "kappa", "rho", "alpha", "gamma", "sigma", "clip_c", "d", "m", "omega_min", "f_gap")


def test_criterion_8_analysis_calculators(report):
    worst = 0.0
    for kind, args, expected in CHECKS:
        if kind == "lr":
            c = TheoryConstants(alpha=args[0], rho=args[1], L=args[2])
            b = lr_bounds(c)
            assert lr_window(c) is None
            worst = max(worst, abs(b.lower / expected[0] - 1), abs(b.upper / expected[1] - 1))
        elif kind == "bound":
            c = TheoryConstants(**dict(zip(KEYS, args[:-1])))
            worst = max(worst, abs(convergence_bound(c, args[-1]) / expected - 1))
        else:
            got = min_rounds(TheoryConstants(alpha=args[0], rho=args[1], L=args[2]))
            worst = max(worst, abs(got - expected) / expected)
    c = TheoryConstants(**dict(zip(KEYS, CHECKS[3][1][:-1])))
    vals = [convergence_bound(c.with_(sigma=math.sqrt(s2)), 100) for s2 in np.linspace(0, 16, 33)]
    monotone = all(b > a for a, b in zip(vals, vals[1:]))
    report(8, "Analysis calculators", worst <= 1e-9 and monotone,
           f"max relative error {worst:.1e} on 9 hand-checked values; bound increasing in sigma^2: {monotone}")


def test_criterion_9_determinism(report):
    small = dict(agents=6, rounds=4, n_train=300, n_test=120, dim=5, batch=8)
    configs = [
        dict(small),
        dict(small, shapley="mc", mc_permutations=5),
        dict(small, algo="dpsgd", topology="bipartite"),
        dict(small, model="mlp1", hidden=4, topology="full", agents=4),
    ]
    identical = 0
    for kw in configs:
        outs = []
        for workers in (1, 1, 4):
            buf = io.StringIO(newline="")
            run_experiment(RunConfig(**kw, workers=workers), stream=buf)
            outs.append(buf.getvalue().encode())
        identical += outs[0] == outs[1] == outs[2]
    report(9, "Determinism", identical == len(configs),
           f"{identical}/{len(configs)} configs byte-identical across repeat and 4-worker runs")
