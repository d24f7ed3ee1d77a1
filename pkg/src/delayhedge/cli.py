"""Command line interface: ``delayhedge COMMAND --config PATH [--seed N] [--out-dir DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .blackscholes import black_scholes_vol, bs_delta, bs_price
from .coefficients import MollifiedCoefficients
from .config import build_model, build_state, config_digest, load_config, resolve_model_block
from .diagnostics import contraction_rows, mollifier_rows, semigroup_defects
from .errors import ConfigError, DelayHedgeError, NumericalError
from .hedging import HedgeConfig, hedge_backtest, replication_error_curve
from .hilbert_state import LiftedState
from .regularity import InnerCylinder, regularity_sweep
from .sde_engine import SimConfig, simulate_mild, simulate_yosida
from .section_pde import SectionDomain, section_crosscheck
from .value_function import delta, gradient_n, value, value_n

COMMANDS = ("price", "delta", "simulate", "section", "regularity", "hedge", "diag")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "DELAYHEDGE_SEED"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


class Run:
    """Resolved inputs shared by every command."""

    def __init__(self, command, cfg, base, seed, out_dir, threads):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.threads = threads
        self.digest = config_digest(cfg)
        self.spec = build_model(resolve_model_block(cfg, base))
        self.state = build_state(cfg, self.spec)
        sim = cfg.get("sim", {})
        self.max_dim = sim.get("max_dim", 4)
        self.sim = SimConfig(dt=sim.get("dt", 1.0 / 64), paths=sim.get("paths", 10000), seed=seed,
                             scheme=sim.get("scheme", "mild"), n=sim.get("n"),
                             antithetic=sim.get("antithetic", False), chunk=sim.get("chunk", 4096),
                             threads=threads)
        self.written = []

    def block(self, name):
        return self.cfg.get(name, {})

    def write(self, name, header, rows):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# delayhedge {__version__}\n")
            fh.write(f"# command {self.command}\n")
            fh.write(f"# seed {self.seed}\n")
            fh.write(f"# config_digest {self.digest}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.written.append(path)
        return path

    def mc(self, n):
        return MollifiedCoefficients(self.spec, n, max_dim=self.max_dim)


def _bs_reference(run, t, kind):
    try:
        vol = black_scholes_vol(run.spec)
    except ConfigError:
        return None
    spot = run.state.present[0]
    tau = run.spec.horizon - t
    fn = bs_price if kind == "price" else bs_delta
    return float(fn(spot, run.spec.payoff.strike, run.spec.rate, vol, tau, run.spec.payoff.kind))


def cmd_price(run):
    t = run.block("price").get("t", 0.0)
    if run.sim.scheme == "yosida":
        est = value_n(run.sim.n, t, run.state, run.spec, run.mc(run.sim.n), run.sim, discount=True)
    else:
        est = value(t, run.state, run.spec, run.sim)
    ref = _bs_reference(run, t, "price") if run.sim.scheme == "mild" else None
    run.write("price.csv", ["t", "scheme", "paths", "dt", "estimate", "std_error", "reference"],
              [[t, est.scheme, est.paths, run.sim.dt, est.mean, est.std_error, ref]])


def cmd_delta(run):
    blk = run.block("delta")
    t = blk.get("t", 0.0)
    j = blk.get("coordinate", 0)
    if j >= run.spec.m:
        raise ConfigError(f"delta/coordinate {j} out of range for dimension {run.spec.m}")
    e0 = np.zeros(run.spec.m)
    e0[j] = 1.0
    direction = LiftedState(e0, np.zeros((run.spec.m, run.spec.grid.nodes)), run.spec.grid)
    if run.sim.scheme == "yosida":
        n = run.sim.n
        mean, se = gradient_n(n, t, run.state, [direction], run.spec, run.mc(n), run.sim, discount=True)[0]
        scheme = f"yosida({n})"
    else:
        est = delta(t, run.state, run.spec, run.sim, direction=direction)
        mean, se, scheme = est.mean, est.std_error, est.scheme
    ref = _bs_reference(run, t, "delta") if run.sim.scheme == "mild" else None
    run.write("delta.csv", ["t", "coordinate", "scheme", "paths", "dt", "estimate", "std_error", "reference"],
              [[t, j, scheme, run.sim.paths, run.sim.dt, mean, se, ref]])


def cmd_simulate(run):
    blk = run.block("simulate")
    t = blk.get("t", 0.0)
    keep = min(blk.get("paths_out", 10), run.sim.paths)
    if run.sim.scheme == "yosida":
        ens = simulate_yosida(run.sim.n, t, run.state, run.spec, run.mc(run.sim.n), run.sim, record_present=True)
    else:
        ens = simulate_mild(t, run.state, run.spec, run.sim, record_present=True)
    m = run.spec.m
    rows = []
    for p in range(keep):
        for k, s in enumerate(ens.times):
            rows.append([p, k, s] + list(ens.present[p, k]))
    run.write("paths.csv", ["path", "step", "time"] + [f"x0_{j}" for j in range(m)], rows)
    hdr = ["coordinate", "terminal_mean", "terminal_std"]
    summ = [[j, float(ens.terminal_present[:, j].mean()), float(ens.terminal_present[:, j].std(ddof=1))
             if ens.paths > 1 else 0.0] for j in range(m)]
    run.write("simulate_summary.csv", hdr, summ)
    if blk.get("full_state", False):
        rows = []
        for p in range(keep):
            rows.append([p] + list(ens.terminal_present[p]) + list(ens.terminal_history[p].reshape(-1)))
        nodes = run.spec.grid.nodes
        hdr = ["path"] + [f"x0_{j}" for j in range(m)] + [f"x1_{j}_{i}" for j in range(m) for i in range(nodes)]
        run.write("terminal_states.csv", hdr, rows)


def _section_domain(run):
    blk = run.block("section")
    m = run.spec.m
    center = blk.get("center", [1.0] * m)
    if len(center) != m:
        raise ConfigError(f"section/center must have length {m}")
    level = blk.get("history_level", float(np.mean(center)))
    hist = np.full((m, run.spec.grid.nodes), level)
    t0 = blk.get("t_start", 0.25 * run.spec.horizon)
    t1 = blk.get("t_end", 0.75 * run.spec.horizon)
    if not t1 < run.spec.horizon:
        raise ConfigError("section/t_end must be before the horizon")
    return SectionDomain(hist, t0, t1, tuple(center), blk.get("radius", 0.3),
                         blk.get("space_nodes", 17), blk.get("time_nodes", 17))


def cmd_section(run):
    blk = run.block("section")
    n = blk.get("n", 4)
    dom = _section_domain(run)
    cfg = run.sim.with_(scheme="mild", paths=blk.get("check_paths", run.sim.paths))
    beta_cfg = cfg.with_(paths=blk.get("beta_paths", max(2, cfg.paths // 2)))
    rep = section_crosscheck(n, dom, run.spec, run.mc(n), cfg, beta_cfg=beta_cfg)
    m = dom.m
    pts = dom.points()
    co = rep.coefficients
    xs = [f"x0_{j}" for j in range(m)]
    a_cols = [f"a_{i}{k}" for i in range(m) for k in range(m)]
    rows = []
    for j, t in enumerate(dom.times):
        for i, p in enumerate(pts):
            beta = co.beta[j, i]
            rows.append([t] + list(p) + list(co.a[j, i].reshape(-1))
                        + [None if np.isnan(beta) else beta, co.beta_se[j, i]])
    run.write("section_coefficients.csv", ["t"] + xs + a_cols + ["beta", "beta_se"], rows)
    rows = []
    interior = dom.interior_mask()
    for j, t in enumerate(dom.times):
        for i, p in enumerate(pts):
            mcv = rep.monte_carlo.values[j, i]
            checked = not np.isnan(mcv)
            rows.append([t] + list(p) + [not interior[i] or j == dom.time_nodes - 1, rep.pde.values[j, i],
                                          rep.pde.std_error[j, i], mcv if checked else None,
                                          rep.monte_carlo.std_error[j, i] if checked else None,
                                          rep.tolerance[j, i] if checked else None,
                                          bool(rep.passed[j, i]) if checked else None])
    run.write("section_surface.csv", ["t"] + xs + ["boundary", "pde", "pde_se", "mc", "mc_se", "tolerance", "pass"],
              rows)
    run.write("section_report.csv", ["metric", "value"], [
        ["n", n], ["theta", rep.theta], ["max_abs", rep.max_abs], ["mean_abs", rep.mean_abs],
        ["price_scale", rep.price_scale], ["ellipticity_min", co.ellipticity[0]],
        ["ellipticity_max", co.ellipticity[1]], ["pass_fraction", float(rep.passed.mean())],
        ["all_passed", rep.all_passed]])


def cmd_regularity(run):
    blk = run.block("regularity")
    dom = _section_domain(run)
    span = dom.t_end - dom.t_start
    inner = InnerCylinder(blk.get("inner_t_start", dom.t_start + 0.25 * span),
                          blk.get("inner_t_end", dom.t_end - 0.25 * span),
                          blk.get("inner_radius", 0.5 * dom.radius))
    cfg = run.sim.with_(scheme="mild")
    sec = run.block("section")
    beta_cfg = cfg.with_(paths=sec.get("beta_paths", max(2, cfg.paths // 2)))
    rep = regularity_sweep(blk.get("n_list", [4, 8]), dom, blk.get("alpha", 0.5), run.spec, cfg, inner,
                           source=blk.get("source", "pde"), beta_cfg=beta_cfg, max_dim=run.max_dim)
    rows = []
    for r in rep.rows:
        (t1, x1), (t2, x2) = r.argmax_pair if r.argmax_pair else ((None, ()), (None, ()))
        rows.append([r.n, rep.alpha, rep.source, r.sup, r.grad_sup, r.seminorm, t1,
                     " ".join(_fmt(c) for c in x1), t2, " ".join(_fmt(c) for c in x2)])
    run.write("regularity.csv", ["n", "alpha", "source", "sup", "grad_sup", "seminorm",
                                 "argmax_t", "argmax_x", "argmax_s", "argmax_y"], rows)


def cmd_hedge(run):
    blk = run.block("hedge")
    hc = HedgeConfig(rebalances=blk.get("rebalances", 16), paths=blk.get("paths", 500), seed=run.seed,
                     delta_source=blk.get("delta_source", "pathwise"), delta_paths=blk.get("delta_paths", 500),
                     n=blk.get("n"), market_steps=blk.get("market_steps"), max_dim=run.max_dim,
                     threads=run.threads)
    res = hedge_backtest(run.state, run.spec, hc)
    rows = [[p, e if not f else None, bool(f)] for p, (e, f) in enumerate(zip(res.errors, res.flagged))]
    s = res.summary()
    rows.append(["summary", s["rmse"], False])
    run.write("hedge_errors.csv", ["path", "error", "flagged"], rows)
    run.write("hedge_summary.csv", ["metric", "value"],
              [[k, v] for k, v in s.items()] + [["bookkeeping_residual", res.bookkeeping_residual]])
    tr = res.trace
    run.write("hedge_trace.csv", ["time", "risky", "h_risky", "h_bond", "value"],
              list(zip(tr["time"], tr["risky"], tr["h_risky"], tr["h_bond"], tr["value"])))
    if "rebalance_list" in blk:
        curve = replication_error_curve(run.state, run.spec, blk["rebalance_list"], hc)
        run.write("hedge_curve.csv", ["rebalances", "rmse", "mean_error", "rmse_se"], curve)


def cmd_diag(run):
    blk = run.block("diag")
    grid = run.spec.grid
    t = blk.get("t", 0.5)
    rows = semigroup_defects(grid, blk.get("n_list", [4, 16, 64]), t)
    out = []
    for i, (n, d) in enumerate(rows):
        out.append([n, t, d, i == 0 or d < rows[i - 1][1]])
    run.write("diag_semigroup.csv", ["n", "t", "defect", "pass"], out)
    out = [[k, k * grid.spacing, a, b, a <= b] for k, a, b in contraction_rows(grid)]
    run.write("diag_contraction.csv", ["shift_nodes", "t", "norm_shifted", "norm", "pass"], out)
    mrows = mollifier_rows(run.spec, blk.get("mollifier_n", [2, 4, 8]), pairs=blk.get("pairs", 400),
                           seed=run.seed, max_dim=8)
    out = []
    for i, r in enumerate(mrows):
        prev = mrows[i - 1] if i else None
        ok = (r["lip_drift"] <= 1.05 * r["declared_drift"] and r["lip_sigma"] <= 1.05 * r["declared_sigma"])
        dec = prev is None or (r["sup_dist_drift"] <= prev["sup_dist_drift"]
                               and r["sup_dist_sigma"] <= prev["sup_dist_sigma"])
        out.append([r["n"], r["lip_drift"], r["declared_drift"], r["lip_sigma"], r["declared_sigma"],
                    r["sup_dist_drift"], r["sup_dist_sigma"], ok, dec])
    run.write("diag_mollifier.csv", ["n", "lip_drift", "declared_drift", "lip_sigma", "declared_sigma",
                                     "sup_dist_drift", "sup_dist_sigma", "lipschitz_pass", "decreasing"], out)


HANDLERS = {"price": cmd_price, "delta": cmd_delta, "simulate": cmd_simulate, "section": cmd_section,
            "regularity": cmd_regularity, "hedge": cmd_hedge, "diag": cmd_diag}


def _parser():
    p = argparse.ArgumentParser(prog="delayhedge", description="Pricing, hedging and regularity "
                                "diagnostics for delay models lifted to a Hilbert space.")
    p.add_argument("--version", action="version", version=f"delayhedge {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", default="builtin:black_scholes",
                   help="JSON config path or builtin:NAME (default builtin:black_scholes)")
    p.add_argument("--seed", type=int, default=None, help=f"base seed; overrides ${SEED_ENV} and the config")
    p.add_argument("--out-dir", default=None, help="output directory (default: config out_dir or ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    return p


def _resolve_seed(flag, cfg):
    if flag is not None:
        seed = flag
    elif os.environ.get(SEED_ENV, "").strip():
        raw = os.environ[SEED_ENV].strip()
        try:
            seed = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
    else:
        seed = cfg.get("seed", 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)  # unknown commands exit 2 with usage
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg, base = load_config(args.config)
        seed = _resolve_seed(args.seed, cfg)
        out_dir = args.out_dir or cfg.get("out_dir", "out")
        run = Run(args.command, cfg, base, seed, out_dir, args.threads)
        HANDLERS[args.command](run)
    except NumericalError as exc:
        print(f"delayhedge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, DelayHedgeError) as exc:
        print(f"delayhedge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in run.written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
