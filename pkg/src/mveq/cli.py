"""Command line entry point.

    mveq solve   CONFIG [--paths N] [--steps N] [--seed S] [--out DIR]
    mveq hedge   CONFIG ...
    mveq compare CONFIG ...
    mveq verify  CONFIG [--operator DIR] ...
    mveq run     CONFIG ...        (dispatch on the config's kind)

Exit status: 0 when every enabled check passes, 1 when some check fails,
2 for configuration errors and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import gc
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bsde import IDENTITY_TOL, EquilibriumOperator, general_equilibrium, solve_mn
from .config import ExperimentConfig, load_config
from .errors import ConfigError, GridMismatch, MveqError, NumericalFailure
from .hedging import LinearClaim, claim_processes, hedging_closed_form_phi, solve_hedging_equilibrium
from .market import evaluate_coefficients, simulate_brownian, simulate_state
from .mean_variance import mv_closed_form_deterministic, solve_mv_equilibrium
from .objective import evaluate_objective
from .openloop import compare_operators, solve_openloop
from .verifier import riccati_view, run_probe_suite, scaled_operator

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class Check:
    name: str
    value: float
    limit: str
    ok: bool

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name} = {self.value:.6g} ({self.limit})"


@dataclass
class Outcome:
    checks: list = field(default_factory=list)
    lines: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def check(self, name, value, limit, ok):
        self.checks.append(Check(name, float(value), limit, bool(ok)))


def _prepare(cfg: ExperimentConfig):
    g = cfg.grid
    grid = simulate_brownian(g.n_paths, g.n_steps, cfg.scenario.T, seed=g.seed)
    return grid, evaluate_coefficients(cfg.scenario, grid)


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rel(a, b) -> float:
    return abs(a - b) / abs(b) if b != 0 else abs(a)


def _user_checks(cfg: ExperimentConfig, out: Outcome, phi0: float, theta_sup: float):
    c = cfg.checks
    if "phi0" in c:
        tol = float(c.get("phi0_rtol", 0.01))
        out.check("phi0 vs configured value", _rel(phi0, float(c["phi0"])), f"<= {tol:g}",
                  _rel(phi0, float(c["phi0"])) <= tol)
    if "theta_sup_max" in c:
        out.check("sup|Theta*|", theta_sup, f"<= {c['theta_sup_max']:g}",
                  theta_sup <= float(c["theta_sup_max"]))
    if "theta_sup_min" in c:
        out.check("sup|Theta*|", theta_sup, f"> {c['theta_sup_min']:g}",
                  theta_sup > float(c["theta_sup_min"]))


def save_operator(directory: Path, op: EquilibriumOperator, grid) -> Path:
    """Full operator as ``.npy`` arrays (plain headers, byte-stable)."""
    d = Path(directory) / "operator"
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "theta.npy", np.ascontiguousarray(op.theta, dtype=float))
    np.save(d / "phi.npy", np.ascontiguousarray(op.phi, dtype=float))
    np.save(d / "offset.npy", np.asarray(op.offset, dtype=float))
    np.save(d / "times.npy", grid.times)
    (d / "kind.txt").write_text(op.kind + "\n")
    return d


def load_operator(directory, grid) -> EquilibriumOperator:
    d = Path(directory)
    if (d / "operator").is_dir():
        d = d / "operator"
    try:
        times = np.load(d / "times.npy")
        theta, phi = np.load(d / "theta.npy"), np.load(d / "phi.npy")
        offset = np.load(d / "offset.npy")
        kind = (d / "kind.txt").read_text().strip()
    except FileNotFoundError as exc:
        raise ConfigError(f"operator dump incomplete: {exc.filename}") from exc
    if not np.array_equal(times, grid.times):
        raise GridMismatch("operator dump was written on a different time grid")
    for name, arr in (("theta", theta), ("phi", phi)):
        if arr.ndim != 2 or arr.shape[1] not in (1, grid.n_paths):
            raise GridMismatch(f"operator {name} of shape {arr.shape} does not fit {grid.shape}")
    offset = float(offset) if offset.ndim == 0 else offset
    return EquilibriumOperator(theta, phi, kind, offset)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _solve_closed_loop(cfg: ExperimentConfig, grid, coeffs):
    """``(riccati view, operator, diagnostics)`` for mean-variance or general kinds."""
    if cfg.kind == "general" and (cfg.l is not None or cfg.h is not None):
        l, h = _lh(cfg, grid)
        sol, op = general_equilibrium(coeffs, grid, cfg.gamma, l=l, h=h)
        return sol, op, dict(sol.diagnostics), (l, h)
    mv = solve_mv_equilibrium(coeffs, cfg.gamma, grid)
    return riccati_view(mv), mv.operator, dict(mv.diagnostics), (None, None)


def cmd_solve(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    d = _outdir(cfg)
    grid, coeffs = _prepare(cfg)
    sol, op, diag, (l, h) = _solve_closed_loop(cfg, grid, coeffs)
    n = cfg.output.dump_paths
    idv = sol.identity_violations()
    io.write_components_csv(d / "riccati.csv", grid.times, sol.components(), n)
    del sol
    gc.collect()
    state = simulate_state(coeffs, grid, cfg.x0, theta=op.theta, phi=op.phi, l=l, h=h)
    io.write_paths_csv(d / "theta.csv", grid.times, op.theta, n)
    io.write_paths_csv(d / "phi.csv", grid.times, op.phi, n)
    io.write_paths_csv(d / "control.csv", grid.times, state.control, n)
    io.write_paths_csv(d / "wealth.csv", grid.times, state.values, n)
    save_operator(d, op, grid)

    phi0 = float(np.mean(op.phi[0]))
    theta0 = float(np.mean(op.theta[0]))
    theta_sup = float(np.abs(op.theta).max())
    for key in ("P1-2P2^2", "L1-4P2L2", "P4-Phi-2P2P3"):
        out.check(f"identity {key}", idv[key], f"<= {IDENTITY_TOL:g}", idv[key] <= IDENTITY_TOL)
    if cfg.kind != "general" and cfg.scenario.deterministic:
        ref = float(mv_closed_form_deterministic(cfg.scenario, cfg.gamma, grid.times[:1]).phi[0, 0])
        out.check("phi*(0) vs closed form", _rel(phi0, ref), f"<= 0.01, closed form {ref:.6f}",
                  _rel(phi0, ref) <= 0.01)
        out.check("sup|Theta*|", theta_sup, "<= 0.005", theta_sup <= 5e-3)
    _user_checks(cfg, out, phi0, theta_sup)
    out.diagnostics.update(diag, identities=idv, phi0=phi0, theta0=theta0,
                           theta_sup=theta_sup, u0=float(np.mean(state.control[0])))
    out.lines += [f"kind: {cfg.kind}", f"phi*(0) = {phi0:.6f}", f"Theta*(0) = {theta0:.6g}",
                  f"u*(0) = {float(np.mean(state.control[0])):.6f}",
                  f"sup|Theta*| = {theta_sup:.6g}"]
    out.lines += [f"identity {k}: {v:.3g}" for k, v in idv.items()]
    return out


# ---------------------------------------------------------------------------
# hedge
# ---------------------------------------------------------------------------


def cmd_hedge(cfg: ExperimentConfig) -> Outcome:
    if cfg.claim is None:
        raise ConfigError("missing section [claim]")
    out = Outcome()
    d = _outdir(cfg)
    grid, coeffs = _prepare(cfg)
    mn = solve_mn(coeffs, grid)
    proc = claim_processes(cfg.claim, grid)
    he = solve_hedging_equilibrium(coeffs, cfg.claim, grid, mn=mn, processes=proc)
    n = cfg.output.dump_paths
    io.write_components_csv(d / "riccati.csv", grid.times,
                            {"M": mn.Y, "N": mn.Z, "hP1": he.sp1.Y, "hL1": he.sp1.Z,
                             "hP2": he.sp2.Y, "hL2": he.sp2.Z}, n)
    del mn
    op = he.operator
    state = simulate_state(coeffs, grid, cfg.x0, theta=op.theta, phi=op.phi, offset=op.offset)
    for name, arr in (("lambda", proc.lam), ("zeta", proc.zeta), ("theta", op.theta),
                      ("phi", op.phi), ("pi", state.control), ("wealth", state.values)):
        io.write_paths_csv(d / f"{name}.csv", grid.times, arr, n)
    save_operator(d, op, grid)

    xi = proc.xi
    hedged = evaluate_objective("hedging", state.terminal, claim=xi)
    idle = simulate_state(coeffs, grid, cfg.x0, control=0.0)
    unhedged = evaluate_objective("hedging", idle.terminal, claim=xi)
    del idle
    ratio = hedged.value / unhedged.value if unhedged.value > 0 else float("inf")
    phi0 = float(np.mean(op.phi[0]))
    theta_sup = float(np.abs(op.theta).max())
    limit = float(cfg.checks.get("variance_ratio_max", 0.05))
    out.check("hedged / unhedged variance", ratio, f"<= {limit:g}", ratio <= limit)
    if (isinstance(cfg.claim, LinearClaim) and cfg.scenario.deterministic
            and np.abs(coeffs.beta).max() == 0.0):
        ref = float(hedging_closed_form_phi(cfg.scenario, cfg.claim, grid.times[:1])[0])
        out.check("phi*(0) vs closed form", _rel(phi0, ref), f"<= 0.01, closed form {ref:.6f}",
                  _rel(phi0, ref) <= 0.01)
    _user_checks(cfg, out, phi0, theta_sup)
    factor = 1.0 / ratio if ratio > 0 else float("inf")
    out.diagnostics.update(he.diagnostics, hedged_variance=hedged.value,
                           hedged_variance_se=hedged.se, unhedged_variance=unhedged.value,
                           variance_ratio=ratio, variance_reduction_factor=factor, phi0=phi0,
                           lambda0=float(np.mean(proc.lam[0])),
                           zeta0=float(np.mean(proc.zeta[0])))
    out.lines += [f"kind: hedging ({cfg.claim!r})", f"phi*(0) = {phi0:.6f}",
                  f"sup|Theta*| = {theta_sup:.6g}",
                  f"hedged variance   = {hedged.value:.6g} (se {hedged.se:.2g})",
                  f"unhedged variance = {unhedged.value:.6g}",
                  f"variance reduction factor = {factor:.2f}x"]
    return out


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def cmd_compare(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    d = _outdir(cfg)
    grid, coeffs = _prepare(cfg)
    mn = solve_mn(coeffs, grid)
    mv = solve_mv_equilibrium(coeffs, cfg.gamma, grid, mn=mn)
    closed = mv.operator
    del mv
    gc.collect()
    ol = solve_openloop(coeffs, cfg.gamma, grid, method=cfg.compare.method,
                        mn=mn if cfg.compare.method == "shared" else None)
    opened = ol.operator
    del ol, mn
    gc.collect()
    rep = compare_operators(closed, opened, grid, r_deterministic=cfg.scenario.r_deterministic,
                            tol=cfg.compare.tol)
    n = cfg.output.dump_paths
    io.write_paths_csv(d / "theta_openloop.csv", grid.times, opened.theta, n)
    io.write_paths_csv(d / "phi_openloop.csv", grid.times, opened.phi, n)
    io.write_paths_csv(d / "theta.csv", grid.times, closed.theta, n)
    io.write_paths_csv(d / "phi.csv", grid.times, closed.phi, n)
    io.write_table_csv(d / "compare.csv",
                       ["step", "time", "theta_sup", "theta_l2", "phi_sup", "phi_l2"],
                       zip(range(grid.times.size), grid.times, rep.theta_sup, rep.theta_l2,
                           rep.phi_sup, rep.phi_l2))
    out.check("sup|Theta - Theta_open| relative", rep.theta_rel, f"<= {rep.tol:g}", rep.theta_pass)
    if rep.phi_pass is not None:
        out.check("sup|phi - phi_open| relative", rep.phi_rel, f"<= {rep.tol:g}", rep.phi_pass)
    out.diagnostics.update(theta_rel=rep.theta_rel, phi_rel=rep.phi_rel,
                           theta_sup=float(rep.theta_sup.max()), phi_sup=float(rep.phi_sup.max()),
                           phi_expected_equal=rep.phi_expected_equal, method=cfg.compare.method)
    out.lines += [f"kind: closed loop vs open loop ({cfg.compare.method})", *rep.lines()]
    if rep.phi_pass is None:
        out.lines.append("phi comparison informational only (r is random)")
    return out


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


_QUOTIENT_HEADER = ["operator", "probe", "t", "amount", "eps", "first", "first_se", "second",
                    "second_se", "total", "total_se", "z_total", "first_ok", "total_ok"]


def _quotient_rows(label: str, rep):
    for p in rep.probes:
        yield _row(label, "fixed", p)
    if rep.adaptive is not None:
        yield _row(label, "adaptive", rep.adaptive)


def _row(label, probe, p):
    r = p.row()
    return [label, probe, r["t"], r["amount"], float(p.eps[0]), r["first"], r["first_se"],
            r["second"], r["second_se"], r["total"], r["total_se"], r["z_total"],
            r["first_ok"], r["total_ok"]]


def cmd_verify(cfg: ExperimentConfig, operator_dir: Optional[str] = None) -> Outcome:
    out = Outcome()
    d = _outdir(cfg)
    grid, coeffs = _prepare(cfg)
    l = h = xi = None
    kind = cfg.kind
    if kind == "hedging":
        if cfg.claim is None:
            raise ConfigError("missing section [claim]")
        proc = claim_processes(cfg.claim, grid)
        xi = proc.xi
        op = (load_operator(operator_dir, grid) if operator_dir else
              solve_hedging_equilibrium(coeffs, cfg.claim, grid, processes=proc).operator)
        if operator_dir and np.ndim(op.offset) == 0 and op.offset == 0.0:
            op = EquilibriumOperator(op.theta, op.phi, op.kind, proc.lam)
        del proc
    else:
        if operator_dir:
            op = load_operator(operator_dir, grid)
            if kind == "general":
                l, h = _lh(cfg, grid)
        else:
            sol, op, _, (l, h) = _solve_closed_loop(cfg, grid, coeffs)
            del sol
        kind = "general" if kind == "general" else "mean-variance"
    gc.collect()
    v = cfg.verify
    suite = dict(x0=cfg.x0, gamma=cfg.gamma, xi=xi, l=l, h=h, times=v.times, amounts=v.amounts,
                 eps=v.eps, ladder=v.ladder, n_se=v.n_se)
    rep = run_probe_suite(coeffs, op, grid, kind, adaptive=v.adaptive, **suite)
    rows = list(_quotient_rows("equilibrium", rep))
    out.check("min quotient z", rep.min_z, f">= -{v.n_se:g}", rep.total_ok)
    worst_first = max(abs(p.first_extrap) / p.first_extrap_se if p.first_extrap_se > 0 else 0.0
                      for p in rep.probes)
    out.check("max |first-order z|", worst_first, f"<= {v.n_se:g}", rep.first_ok)
    out.lines.append(f"probes: {len(rep.probes)} fixed"
                     + (f", adaptive amount {rep.adaptive_amount:.4g}" if rep.adaptive else ""))
    out.diagnostics.update(min_z=rep.min_z, max_first_z=worst_first,
                           adaptive_amount=rep.adaptive_amount)
    if v.power_check:
        bad = scaled_operator(op, v.phi_scale)
        prep = run_probe_suite(coeffs, bad, grid, kind, adaptive=True, **suite)
        rows += list(_quotient_rows(f"phi_x{v.phi_scale:g}", prep))
        out.check(f"power: min z with phi x{v.phi_scale:g}", prep.min_z,
                  f"< -{v.power_n_se:g}", prep.rejects(v.power_n_se))
        out.diagnostics.update(power_min_z=prep.min_z)
    io.write_table_csv(d / "quotients.csv", _QUOTIENT_HEADER, rows)
    out.lines.append("operator  probe  t  amount  total  total_se  z_total")
    for r in rows:
        out.lines.append("  ".join(io.fmt(x) if not isinstance(x, float) else f"{x:.4g}"
                                   for x in r[:4] + r[9:12]))
    return out


def _lh(cfg, grid):
    l = None if cfg.l is None else np.broadcast_to(cfg.l.evaluate(grid.times, grid.W), grid.shape)
    h = None if cfg.h is None else np.broadcast_to(cfg.h.evaluate(grid.times, grid.W), grid.shape)
    return l, h


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, command: Optional[str] = None,
                   operator_dir: Optional[str] = None) -> Outcome:
    """Run one subcommand (or the default for ``cfg.kind``) and write the summary."""
    if command in (None, "run"):
        command = {"mean-variance": "solve", "general": "solve", "hedging": "hedge",
                   "open-loop-compare": "compare"}[cfg.kind]
        outcome = _dispatch(cfg, command, None)
        if command == "solve" and cfg.verify.enabled:
            ver = cmd_verify(cfg, str(Path(cfg.output.dir)))
            outcome.checks += ver.checks
            outcome.lines += ver.lines
            outcome.diagnostics["verify"] = ver.diagnostics
    else:
        outcome = _dispatch(cfg, command, operator_dir)
    d = _outdir(cfg)
    io.write_json(d / "diagnostics.json", {"command": command, "kind": cfg.kind,
                                            "passed": outcome.passed,
                                            "checks": [c.__dict__ for c in outcome.checks],
                                            "diagnostics": outcome.diagnostics})
    text = [f"config: {cfg.source}",
            f"grid: {cfg.grid.n_paths} paths, {cfg.grid.n_steps} steps, seed {cfg.grid.seed}",
            *outcome.lines, "", *(c.line() for c in outcome.checks),
            f"overall: {'PASS' if outcome.passed else 'FAIL'}"]
    (d / "summary.txt").write_text("\n".join(text) + "\n")
    return outcome


def _dispatch(cfg, command, operator_dir):
    if command == "solve":
        if cfg.kind == "hedging":
            raise ConfigError("kind hedging is solved by the hedge subcommand")
        return cmd_solve(cfg)
    if command == "hedge":
        return cmd_hedge(cfg)
    if command == "compare":
        return cmd_compare(cfg)
    if command == "verify":
        return cmd_verify(cfg, operator_dir)
    raise ConfigError(f"unknown command {command!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mveq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve the closed-loop system and dump the operator"),
                        ("hedge", "solve the hedging system and report variance reduction"),
                        ("compare", "compare closed-loop and open-loop operators"),
                        ("verify", "run perturbation probes against an operator"),
                        ("run", "default pipeline for the config's kind")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="TOML experiment config")
        sp.add_argument("--paths", type=int, help="override grid.n_paths")
        sp.add_argument("--steps", type=int, help="override grid.n_steps")
        sp.add_argument("--seed", type=int, help="override grid.seed")
        sp.add_argument("--out", help="override output.dir")
        if name == "verify":
            sp.add_argument("--operator", help="directory written by solve or hedge")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(paths=args.paths, steps=args.steps,
                                                      seed=args.seed, out=args.out)
        outcome = run_experiment(cfg, args.command, getattr(args, "operator", None))
    except NumericalFailure as exc:
        print(f"numerical failure [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MveqError, ValueError) as exc:
        print(f"config error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print((Path(cfg.output.dir) / "summary.txt").read_text(), end="")
    return EXIT_OK if outcome.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
