"""Command-line experiment runner.

Every subcommand reads a flat ``key = value`` config (``--config``), lets
``MEMBRANE_<KEY>`` environment variables override it, writes CSV files with a
``#`` header carrying the package version and config digest, and finishes
with ``summary.json`` in the output directory.

Exit codes: 0 success, 1 invalid config, 2 numerical failure or violated
precondition, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cones import ConeError, extended_pinned_set, interpolation_ratio, local_poincare_ratio, simplex_directions
from .config import ConfigError, ExperimentConfig, fmt, header
from .cutoff import (
    CutoffError,
    CutoffParams,
    bad_level0,
    build_cutoff,
    build_hierarchy,
    hole_filler_terms,
    probe_points,
    verify_cutoff,
)
from .lattice import BoxSpec, Grid, LatticeError, LatticeField, Polymer, Scales, cube, scales_from_epsilon
from .pinning import (
    PinningError,
    binomial_tail_bound_check,
    fkg_lattice_check,
    square_well_counterexample,
    square_well_limits,
    strong_domination_check,
    zeta_exact,
)
from .sampler import ChainConfig, HeatBath, SamplerError, covariance_profile, estimate_mass, estimate_variance
from .solver import GreenSolver, SolverError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3


class Run:
    """Output directory, config and the summary collected by a subcommand."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.summary: dict[str, object] = {"command": command, "version": __version__, "config": cfg.digest()}
        self.files: list[str] = []

    def write_csv(self, name: str, columns: list[str], rows) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with path.open("w") as fh:
            fh.write(header(self.command, self.cfg, __version__))
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(v if isinstance(v, str) else fmt(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")
        self.files.append(name)
        return path

    def write_text(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(header(self.command, self.cfg, __version__) + text)
        self.files.append(name)

    def finish(self) -> None:
        self.summary["files"] = self.files
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True, default=str) + "\n")


def _box(d: int, side: int, lo: int = 0) -> list[tuple[int, ...]]:
    return list(itertools.product(range(lo, lo + side), repeat=d))


def _chain(cfg: ExperimentConfig, eps: float) -> ChainConfig:
    c = ChainConfig(eps, sweeps=cfg.get_int("sweeps", 2000, minimum=1), burn_in=cfg.get_int("burn_in", 200, minimum=0),
                    thin=cfg.get_int("thin", 10, minimum=1), batches=cfg.get_int("batches", 10, minimum=10),
                    seed=cfg.get_int("seed", 0))
    try:
        c.check()
    except SamplerError as exc:
        raise ConfigError(str(exc)) from exc
    return c


def _site(cfg: ExperimentConfig, key: str, d: int, default: int) -> tuple[int, ...]:
    vals = cfg.get_ints(key, [default] * d)
    if len(vals) != d:
        raise ConfigError(f"{key} needs {d} coordinates, got {len(vals)}")
    return tuple(vals)


# ---------------------------------------------------------------------------
# subcommands


def cmd_green(run: Run) -> int:
    cfg = run.cfg
    d, side = cfg.get_int("d", 2, minimum=1), cfg.get_int("side", 6, minimum=1)
    x = _site(cfg, "x", d, side // 2)
    solver = GreenSolver(_box(d, side))
    col = solver.green_column(x)
    rows = [(*map(int, s), float(v)) for s, v in zip(solver.sites, col)]
    run.write_csv("green.csv", [f"y{k}" for k in range(d)] + ["G"], rows)
    run.summary.update(G_xx=solver.variance(x), log_partition=solver.log_partition(), sites=solver.n)
    print(f"G(x,x) = {fmt(solver.variance(x))}, log Z = {fmt(solver.log_partition())}")
    return EXIT_OK


def _zeta_sites(cfg: ExperimentConfig) -> list[tuple[int, ...]]:
    return _box(cfg.get_int("d", 1, minimum=1), cfg.get_int("side", 8, minimum=1))


def cmd_zeta(run: Run) -> int:
    sites = _zeta_sites(run.cfg)
    eps = run.cfg.get_float("epsilon", 1.0, positive=True)
    law = zeta_exact(sites, eps)
    probs = law.probabilities
    rows = [(m, " ".join(str(s) for k, s in enumerate(law.sites) if m >> k & 1).replace(",)", ")").replace(", ", ";"),
             float(probs[m])) for m in range(len(probs))]
    run.write_csv("zeta.csv", ["mask", "pinned", "probability"], rows)
    density = [float(probs[(np.arange(len(probs)) >> k & 1) == 1].sum()) for k in range(len(sites))]
    run.summary.update(sites=len(sites), epsilon=eps, pin_density=density)
    print(f"{len(probs)} pinned sets, pin density " + " ".join(f"{p:.4f}" for p in density))
    return EXIT_OK


def cmd_fkg(run: Run) -> int:
    sites = _zeta_sites(run.cfg)
    eps = run.cfg.get_float("epsilon", 1.0, positive=True)
    rep = fkg_lattice_check(zeta_exact(sites, eps), slack=run.cfg.get_float("slack", 1e-9))
    run.write_csv("fkg_violations.csv", ["a", "b"], rep.violations)
    run.summary.update(violations=rep.count, pairs=rep.pairs, worst_log_margin=rep.worst_log_margin)
    print(rep.summary())
    return EXIT_OK if rep.count == 0 else EXIT_NUMERIC


def cmd_domination(run: Run) -> int:
    cfg = run.cfg
    sites = _zeta_sites(cfg)
    eps = cfg.get_float("epsilon", 1.0, positive=True)
    law = zeta_exact(sites, eps)
    lower = strong_domination_check(law, cfg.get_float("p_lower", 0.0), "dominates", seed=cfg.get_int("seed", 0))
    upper = strong_domination_check(law, cfg.get_float("p_upper", 1.0), "dominated", seed=cfg.get_int("seed", 0))
    rows = [(r.direction, float(r.p), r.checked, len(r.violations), r.min_conditional, r.max_conditional)
            for r in (lower, upper)]
    run.write_csv("domination.csv", ["direction", "p", "checked", "violations", "min_conditional", "max_conditional"], rows)
    ok = lower.holds and upper.holds
    run.summary.update(holds=ok, min_conditional=lower.min_conditional, max_conditional=lower.max_conditional)
    print(f"conditional pin probabilities in [{lower.min_conditional:.6g}, {lower.max_conditional:.6g}]; "
          f"domination {'holds' if ok else 'fails'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_variance_sweep(run: Run) -> int:
    cfg = run.cfg
    eps_grid = cfg.get_floats("epsilons", [1e-2, 1e-3, 1e-4])
    if len(eps_grid) < 3:
        raise ConfigError(f"the slope fit needs at least 3 epsilon values, got {len(eps_grid)}")
    if any(not e > 0 for e in eps_grid):
        raise ConfigError("epsilon values must be positive")
    d, side = cfg.get_int("d", 4, minimum=1), cfg.get_int("side", 12, minimum=1)
    x = _site(cfg, "x", d, side // 2)
    estimator = cfg.get_str("estimator", "mixture")
    rows = []
    for eps in eps_grid:
        est = estimate_variance(_box(d, side), x, _chain(cfg, eps), estimator=estimator)
        rows.append((eps, abs(math.log(eps)), est.mean, est.se, est.tau_int))
        print(f"eps={eps:g}: E[psi_x^2] = {est.mean:.6g} +- {est.se:.2g}", flush=True)
    run.write_csv("variance.csv", ["epsilon", "abs_log_epsilon", "mean", "se", "tau_int"], rows)
    slope = float(np.polyfit([r[1] for r in rows], [r[2] for r in rows], 1)[0])
    run.summary.update(slope=slope)
    print(f"slope {fmt(slope)}")
    return EXIT_OK


def _profile(run: Run):
    cfg = run.cfg
    d, side = cfg.get_int("d", 4, minimum=1), cfg.get_int("side", 12, minimum=2)
    eps = cfg.get_float("epsilon", 1e-2, positive=True)
    origin = _site(cfg, "origin", d, 1)
    theta = tuple(cfg.get_floats("theta", [1.0] * d))
    k_max = cfg.get_int("k_max", side - 2, minimum=1)
    prof = covariance_profile(_box(d, side), origin, theta, k_max, _chain(cfg, eps), cfg.get_str("estimator", "mixture"))
    run.write_csv("covariance.csv", ["k", "cov", "se", "n_samples", "tau_int"],
                  [(p.k, p.cov, p.se, p.n_samples, p.tau_int) for p in prof])
    return prof, theta, eps, d


def cmd_covariance_decay(run: Run) -> int:
    prof, _, _, _ = _profile(run)
    for p in prof:
        print(f"{p.k:3d} {p.cov: .6e} +- {p.se:.1e}")
    run.summary.update(points=len(prof))
    return EXIT_OK


def cmd_mass(run: Run) -> int:
    prof, theta, eps, d = _profile(run)
    lam = scales_from_epsilon(d, eps).lambda_mac
    lo = run.cfg.get_int("window_lo", math.ceil(lam / 2))
    hi = run.cfg.get_int("window_hi", prof[-1].k)
    est = estimate_mass(prof, theta, (lo, hi), fit=run.cfg.get_str("fit", "envelope"))
    run.summary.update(rate=est.rate, intercept=est.intercept, points=est.points, lambda_mac=lam)
    print(f"mass rate {fmt(est.rate)} from {est.points} points (1/lambda_mac = {1 / lam:.4g})")
    return EXIT_OK


def cmd_hardy_rellich(run: Run) -> int:
    cfg = run.cfg
    d, side = cfg.get_int("d", 4, minimum=1), cfg.get_int("side", 8, minimum=2)
    radii = cfg.get_ints("radii", [16, 32])
    q = cfg.get_float("pin_fraction", 0.2)
    rng = np.random.default_rng(cfg.get_int("seed", 0))
    cones = simplex_directions(d)
    box = _box(d, side)
    rows = []
    for n in range(cfg.get_int("instances", 20, minimum=1)):
        pin = [s for s in box if rng.random() < q]
        u = LatticeField.zeros((0,) * d, (side - 1,) * d)
        pinned = set(pin)
        for s in box:
            if s not in pinned:
                u[s] = rng.normal()
        ext = extended_pinned_set((0,) * d, (side - 1,) * d, pin)
        for r in radii:
            res = local_poincare_ratio(u, ext, box, r, cones)
            rows.append((n, r, res.lhs, res.rhs, res.ratio))
    run.write_csv("hardy_rellich.csv", ["instance", "R", "lhs", "rhs", "ratio"], rows)
    best = {r: max(row[4] for row in rows if row[1] == r) for r in radii}
    run.summary.update(max_ratio={str(k): v for k, v in best.items()})
    print("max ratio " + ", ".join(f"R={r}: {v:.4g}" for r, v in best.items()))
    return EXIT_OK if all(math.isfinite(v) for v in best.values()) else EXIT_NUMERIC


def cmd_interpolation(run: Run) -> int:
    cfg = run.cfg
    sides = cfg.get_ints("sides", [25, 51])
    rng = np.random.default_rng(cfg.get_int("seed", 0))
    rows = []
    for n in range(cfg.get_int("instances", 20, minimum=1)):
        for sd in sides:
            if sd % 2 == 0:
                raise ConfigError("box sides must be odd")
            bx = cube((0, 0), (sd - 1) // 2)
            u = LatticeField(bx.lo, rng.normal(size=(sd, sd)))
            mask = rng.random((sd, sd)) < cfg.get_float("fraction", 0.75)
            res = interpolation_ratio(u, bx, mask)
            rows.append((n, sd, res.lhs, res.rhs, res.ratio))
    run.write_csv("interpolation.csv", ["instance", "side", "lhs", "rhs", "ratio"], rows)
    best = {sd: max(r[4] for r in rows if r[1] == sd) for sd in sides}
    run.summary.update(max_ratio={str(k): v for k, v in best.items()})
    print("max ratio " + ", ".join(f"side {k}: {v:.4g}" for k, v in best.items()))
    return EXIT_OK if all(math.isfinite(v) for v in best.values()) else EXIT_NUMERIC


def _cutoff_setup(cfg: ExperimentConfig):
    """Cut-off parameters and a sampled pinned set in a side-12 box placed in U's annulus."""
    d = cfg.get_int("d", 4, minimum=1)
    params = CutoffParams(cfg.get_int("K", 3), cfg.get_int("L", 3), cfg.get_int("M", 13),
                          Scales.explicit(d, cfg.get_int("lambda_mic", 7), cfg.get_int("lambda_mac", 245)))
    s = params.macro
    side = cfg.get_int("side", 12, minimum=1)
    c = params.micro * round((s // 2 + cfg.get_int("offset", s // 2)) / params.micro)
    lo = (c - side // 2 + 1,) + (-(side // 2) + 1,) * (d - 1)
    hi = tuple(v + side - 1 for v in lo)
    chain = HeatBath(list(itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)])),
                     cfg.get_float("epsilon", 10.0, positive=True), seed=cfg.get_int("seed", 0))
    chain.run(cfg.get_int("sweeps", 200, minimum=1))
    pin = chain.state.pinned_sites()
    ext = extended_pinned_set(lo, hi, pin)
    pad = 4 * params.micro
    region = (tuple(v - pad for v in lo), tuple(v + pad for v in hi))
    level0 = bad_level0(ext, params, simplex_directions(d), region)
    U = Polymer(Grid(d, s), frozenset([BoxSpec((0,) * d, Fraction(s, 2))]))
    return params, U, level0, len(pin)


def cmd_hierarchy(run: Run) -> int:
    params, _, level0, npin = _cutoff_setup(run.cfg)
    h = build_hierarchy(level0, params)
    run.write_text("hierarchy.txt", h.dump())
    run.summary.update(pinned=npin, j_star=params.j_star, level0=len(level0),
                       per_level=[len(h.bad(j)) for j in range(params.j_star + 1)],
                       type_one=len(h.macro_type_one()), exact_cover=h.exact_cover)
    print(f"{npin} pinned sites, {len(level0)} bad level-0 boxes, j_star = {params.j_star}, "
          f"{len(h.macro_type_one())} macroscopic type-I boxes")
    return EXIT_OK


def cmd_cutoff(run: Run) -> int:
    params, U, level0, npin = _cutoff_setup(run.cfg)
    h = build_hierarchy(level0, params)
    eta = build_cutoff(U, h, params)
    probes = probe_points(U, params, run.cfg.get_int("probes", 2000, minimum=1), run.cfg.get_int("seed", 0))
    chk = verify_cutoff(eta, level0, probes)
    vals = eta(probes)
    run.write_csv("cutoff_probes.csv", [f"y{k}" for k in range(params.dim)] + ["eta"],
                  [(*map(int, p), float(v)) for p, v in zip(probes, vals)])
    run.write_text("corrections.log", "".join(line + "\n" for line in eta.log))
    run.summary.update(pinned=npin, corrections=len(eta.corrections), zero_violations=chk.zero_violations,
                       one_violations=chk.one_violations, affine_violations=chk.affine_violations,
                       max_scaled_hessian=chk.max_hessian, checked=chk.checked, ok=chk.ok)
    print(f"{len(eta.corrections)} corrections, {chk.checked} probe points, "
          f"{'all properties hold' if chk.ok else 'property violated'}")
    return EXIT_OK if chk.ok else EXIT_NUMERIC


def cmd_holefiller(run: Run) -> int:
    cfg = run.cfg
    rng = np.random.default_rng(cfg.get_int("seed", 0))
    rows = []
    for d in cfg.get_ints("dims", [1, 2, 4]):
        for n in range(cfg.get_int("instances", 100, minimum=1)):
            su = tuple(int(v) for v in rng.integers(1, 7, size=d))
            se = tuple(int(v) for v in rng.integers(1, 7, size=d))
            u = LatticeField(tuple(int(v) for v in rng.integers(-3, 3, size=d)), rng.normal(size=su))
            eta = LatticeField(tuple(int(v) for v in rng.integers(-3, 3, size=d)), rng.random(size=se))
            t = hole_filler_terms(u, eta)
            rows.append((d, n, t.lhs, t.rhs, t.residual, t.shifted_residual))
    run.write_csv("holefiller.csv", ["d", "instance", "lhs", "rhs", "residual", "shifted_residual"], rows)
    worst = max(r[4] / (1 + abs(r[2])) for r in rows)
    run.summary.update(max_relative_residual=worst)
    print(f"max residual {worst:.3e}")
    return EXIT_OK if worst <= cfg.get_float("tolerance", 1e-10) else EXIT_NUMERIC


def cmd_tailbound(run: Run) -> int:
    cfg = run.cfg
    n_max = cfg.get_int("n_max", 30, minimum=1)
    step = Fraction(cfg.get_str("step", "1/50"))
    if not 0 < step <= Fraction(1, 2):
        raise ConfigError("step must lie in (0, 1/2]")
    grid = [k * step for k in range(int(Fraction(1, 2) / step) + 1)]
    rows, bad = [], 0
    for n in range(1, n_max + 1):
        for r in grid[1:]:
            for p in grid:
                if p > r:
                    break
                t = binomial_tail_bound_check(n, p, r)
                bad += not t.ok
                rows.append((n, str(p), str(r), float(t.lhs), t.rhs_float, int(t.ok)))
    run.write_csv("tailbound.csv", ["N", "p", "r", "lhs", "rhs", "ok"], rows)
    run.summary.update(checked=len(rows), failures=bad)
    print(f"{len(rows)} (N, p, r) triples, {bad} failures")
    return EXIT_OK if bad == 0 else EXIT_NUMERIC


def cmd_counterexample(run: Run) -> int:
    cfg = run.cfg
    n = cfg.get_float("n", 10.0, positive=True)
    t = cfg.get_float("t", 1e-4, positive=True)
    sw = square_well_counterexample(n, t)
    lim = square_well_limits(n)
    rows = [(k, sw.areas[k], sw.scaled[k], lim[k]) for k in sorted(lim)]
    run.write_csv("square_well.csv", ["event", "probability", "scaled", "limit"], rows)
    run.summary.update(lattice_ratio=sw.lattice_ratio, scaled=sw.scaled, limits=lim)
    print(f"lattice-condition ratio {sw.lattice_ratio:.6g}")
    return EXIT_OK


def cmd_acceptance(run: Run) -> int:
    from .acceptance import format_line, run_criterion

    numbers = run.cfg.get_ints("criteria", list(range(1, 16)))
    results = []
    for n in numbers:
        if not 1 <= n <= 15:
            raise ConfigError(f"no criterion {n}")
        res = run_criterion(n)
        results.append(res)
        print(format_line(res), flush=True)
    run.write_csv("acceptance.csv", ["criterion", "name", "passed", "seconds", "detail"],
                  [(r.number, r.name, int(r.passed), r.seconds, '"' + r.detail.replace('"', "'") + '"') for r in results])
    failed = [r.number for r in results if not r.passed]
    run.summary.update(passed=len(results) - len(failed), failed=failed)
    return EXIT_OK if not failed else EXIT_ACCEPTANCE


COMMANDS: dict[str, Callable[[Run], int]] = {
    "green": cmd_green,
    "zeta": cmd_zeta,
    "fkg": cmd_fkg,
    "domination": cmd_domination,
    "variance-sweep": cmd_variance_sweep,
    "covariance-decay": cmd_covariance_decay,
    "mass": cmd_mass,
    "hardy-rellich": cmd_hardy_rellich,
    "interpolation": cmd_interpolation,
    "hierarchy": cmd_hierarchy,
    "cutoff": cmd_cutoff,
    "holefiller": cmd_holefiller,
    "tailbound": cmd_tailbound,
    "counterexample": cmd_counterexample,
    "acceptance": cmd_acceptance,
}

NUMERIC_ERRORS = (SolverError, SamplerError, PinningError, CutoffError, ConeError, LatticeError,
                  ArithmeticError, np.linalg.LinAlgError)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="membrane-pinning", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="key = value config file")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for compiled kernels")
    ap.add_argument("--version", action="version", version=__version__)
    return ap


def _set_threads(n: int) -> None:
    if n < 1:
        raise ConfigError("--threads must be positive")
    if n == 1:
        return
    import warnings

    import numba

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, os.environ)
        if args.seed is not None:
            cfg.values["seed"] = str(args.seed)
        _set_threads(args.threads)
        run = Run(args.command, cfg, args.out / args.command)
        code = COMMANDS[args.command](run)
        run.summary["exit"] = code
        run.finish()
        return code
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read or write: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
