"""Scenario runners: each turns a validated config into a :class:`RunReport`."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import kstest

from ..continuum import (correction_potential, discrete_vs_continuum, energy_shift,
                         energy_shift_scaling, ke_continuum_check)
from ..dynamics import (equilibration_metric, relax_to_stationary, run_dynamics, trend_slope)
from ..ensemble import CutoffParams, DensitySpec, EnsembleState, sample_ensemble
from ..errors import DynamicsAborted, RelaxationError
from ..oracle import (box_grid, evolve, evolve_nonlinear, ground_state, quantum_potential)
from ..potentials import make_potential
from ..variety import three_body_potential, variety_gradient, variety_potential
from .report import RunReport, Table, check

ENERGY_COLUMNS = ["kinetic", "variety_potential", "external_potential", "total"]


def density_spec(cfg):
    d = cfg.density
    if d["name"] == "uniform":
        return DensitySpec.uniform(d["low"], d["high"])
    return DensitySpec.gaussian(d["mean"], d["sigma"])


def external_potential(cfg):
    p = cfg.potential
    return make_potential(p["name"], cfg.constants["mass"], omega=p["omega"], center=p["center"])


def cutoff_params(cfg):
    c = cfg.cutoffs
    return CutoffParams(R=c["R"], A=c["A"], epsilon_min=c["epsilon_min"])


def oracle_grid(cfg):
    g = cfg.grid
    return box_grid(g["low"], g["high"], g["points"])


def _seeds(cfg):
    return cfg.seeds or [0]


def _relative_drift(totals):
    totals = np.asarray(totals)
    if totals.size < 2:
        return None
    scale = max(abs(totals[0]), 1e-300)
    return float(np.max(np.abs(totals - totals[0])) / scale)


def run_few_n(cfg, map_fn=map):
    report = RunReport(cfg.scenario, cfg.hash)
    consts = cfg.physical_constants()
    pot = external_potential(cfg)
    integ = cfg.integrator
    d = consts.dim
    summary = Table(["seed", "N", "variety_potential", "max_variety_force", "three_body",
                     "energy_drift", "completed_steps", "aborted"])
    traj = Table(["seed", "step", "t", "k"] + [f"x{a}" for a in range(d)] + ENERGY_COLUMNS)
    drifts, zero_ok, negative_ok, tb_ok, classical = [], [], [], [], []
    aborted_any = None
    for seed in _seeds(cfg):
        if cfg.params["positions"] is not None:
            pos = np.asarray(cfg.params["positions"], dtype=float).reshape(-1, d)
            state = EnsembleState.from_positions(pos, consts, cutoff_params(cfg))
        else:
            state = sample_ensemble(density_spec(cfg), cfg.N, seed, consts, cutoff_params(cfg))
        v0 = cfg.params["velocities"]
        v0 = None if v0 is None else np.asarray(v0, dtype=float).reshape(-1, d)
        N = state.N
        uv = variety_potential(state)
        fmax = float(np.max(np.abs(variety_gradient(state)))) if N else 0.0
        tb = None
        if N < 3:
            zero_ok.append(abs(uv) <= cfg.thresholds["zero_tol"]
                           and fmax <= cfg.thresholds["zero_tol"])
        else:
            negative_ok.append(uv < 0)
        if N == 3 and d == 1:
            tb = three_body_potential(*state.positions[:, 0], consts)
            tb_ok.append(math.isclose(tb, 13.5 * abs(uv), rel_tol=1e-9))
        aborted = False
        try:
            record = run_dynamics(state, pot, integ["dt"], integ["steps"], v0, integ["gamma"],
                                  integ["record_every"], smooth_cutoff=integ["smooth_cutoff"],
                                  track_phases=integ["track_phases"], seed=seed)
        except DynamicsAborted as exc:
            record, aborted = exc.trajectory, True
            aborted_any = f"seed {seed}: dynamics aborted at step {exc.step} (t={exc.time:.6g}): {exc}"
        totals = record.energy_column("total")
        drift = _relative_drift(totals) if integ["gamma"] == 0 else None
        if drift is not None and not aborted:
            drifts.append(drift)
        for n, (t, frame, e) in enumerate(zip(record.times, record.positions, record.energies)):
            for k in range(N):
                traj.add(seed=seed, step=n * integ["record_every"], t=float(t), k=k,
                         **{f"x{a}": float(frame[k, a]) for a in range(d)},
                         **{c: float(getattr(e, c)) for c in ENERGY_COLUMNS})
        if N == 1 and pot.name == "free" and record.steps:
            v = np.zeros(d) if v0 is None else v0[0]
            expected = state.positions[0] + np.outer(record.times, v)
            classical.append(float(np.max(np.abs(record.positions[:, 0, :] - expected))))
        summary.add(seed=seed, N=N, variety_potential=uv, max_variety_force=fmax, three_body=tb,
                    energy_drift=drift, completed_steps=record.steps, aborted=aborted)
    report.tables = {"summary": summary, "trajectory": traj}
    thr = cfg.thresholds
    if zero_ok:
        report.flags.append(check("variety_zero_below_three", all(zero_ok), True, all(zero_ok)))
    if negative_ok:
        report.flags.append(check("variety_potential_negative", all(negative_ok), True,
                                  all(negative_ok)))
    if tb_ok:
        report.flags.append(check("three_body_closed_form", all(tb_ok), True, all(tb_ok),
                                  "closed form = 27/2 |U|"))
    if classical:
        worst = max(classical)
        report.flags.append(check("classical_uniform_motion", worst, 1e-9, worst <= 1e-9))
    if integ["gamma"] == 0:
        worst = max(drifts) if drifts else None
        passed = aborted_any is None and (worst is None or worst <= thr["energy_drift"])
        flag = check("energy_drift", worst, thr["energy_drift"], passed,
                     "dynamics aborted" if aborted_any else "")
        if aborted_any:
            flag.passed, flag.status = False, "fail"
        report.flags.append(flag)
    report.failure = aborted_any
    report.counts = {"steps": integ["steps"], "seeds": len(_seeds(cfg))}
    return report


def reference_cdf(cfg):
    """Grid CDF of the oracle ground state for the configured potential."""
    z = oracle_grid(cfg)
    pot = external_potential(cfg)
    psi, energy = ground_state(pot.on_grid(z), z, cfg.physical_constants())
    cdf = cumulative_trapezoid(psi.rho, z, initial=0.0)
    return z, cdf / cdf[-1], energy


def _relax_cell(args):
    cfg, seed = args
    consts = cfg.physical_constants()
    state = sample_ensemble(density_spec(cfg), cfg.N, seed, consts, cutoff_params(cfg))
    integ = cfg.integrator
    try:
        out = relax_to_stationary(state, external_potential(cfg), integ["gamma"], integ["tol"],
                                  integ["dt"], integ["max_steps"], integ["smooth_cutoff"])
        return seed, np.array(out.positions[:, 0]), None
    except RelaxationError as exc:
        r = exc.report
        return seed, np.array(r.state.positions[:, 0]), (str(exc), r.steps, r.max_force)


def run_relax(cfg, map_fn=map):
    report = RunReport(cfg.scenario, cfg.hash)
    table = Table(["seed", "N", "converged", "ks", "note"])
    positions = Table(["seed", "k", "x"])
    has_reference = cfg.potential["name"] == "harmonic" and cfg.constants["dim"] == 1
    if has_reference:
        z, cdf, _ = reference_cdf(cfg)
    ks_values, failures = [], []
    for seed, x, err in map_fn(_relax_cell, [(cfg, s) for s in _seeds(cfg)]):
        ks = None
        if err is None and has_reference:
            ks = float(kstest(x, lambda q: np.interp(q, z, cdf)).statistic)
            ks_values.append(ks)
        if err is not None:
            failures.append(f"seed {seed}: {err[0]}")
        table.add(seed=seed, N=cfg.N, converged=err is None, ks=ks, note="" if err is None else err[0])
        for k, xk in enumerate(x):
            positions.add(seed=seed, k=k, x=float(xk))
    report.tables = {"relax": table, "relaxed_positions": positions}
    thr = cfg.thresholds["ks"]
    if failures:
        report.flags.append(check("ks", float("nan"), thr, False, "relaxation failed"))
        report.failure = "; ".join(failures)
    elif has_reference:
        worst = max(ks_values)
        report.flags.append(check("ks", worst, thr, worst <= thr))
    else:
        report.flags.append(check("ks", None, thr, True, "no reference density"))
    report.counts = {"seeds": len(_seeds(cfg))}
    return report


def interior_mask(rho, fraction=1e-6):
    return rho >= fraction * rho.max()


def run_evolve_compare(cfg, map_fn=map):
    report = RunReport(cfg.scenario, cfg.hash)
    consts = cfg.physical_constants()
    z = oracle_grid(cfg)
    U = external_potential(cfg).on_grid(z)
    psi0, E0 = ground_state(U, z, consts)
    integ = cfg.integrator
    dt = integ["dt"] or 1e-3
    steps = integ["steps"]
    p = cfg.params
    thr = cfg.thresholds

    interior = interior_mask(psi0.rho)
    UQ = quantum_potential(psi0.rho, z, consts)
    total = (U + UQ)[interior & np.isfinite(UQ)]
    spread = float(np.max(np.abs(total - E0)))

    linear = evolve(psi0, U, dt, steps, consts)
    limit = evolve_nonlinear(psi0, U, math.inf, p["r_prime"], dt, steps, consts)
    nonlinear = evolve_nonlinear(psi0, U, p["N"], p["r_prime"], dt, steps, consts, mode=p["mode"])
    identity = float(np.max(np.abs(limit.psi - linear.psi)))
    drift_lin = abs(linear.norm() - 1.0)
    drift_nl = abs(nonlinear.norm() - 1.0)
    predicted = energy_shift(psi0, correction_potential(psi0, p["N"], p["r_prime"], 1, consts))
    elapsed = dt * steps
    measured = -float(np.angle(np.vdot(linear.psi, nonlinear.psi))) / elapsed if steps else None
    consistency = None if measured is None or predicted == 0 else abs(measured / predicted - 1.0)

    eigen = Table(["seed", "E0", "hj_spread", "norm_drift_linear", "norm_drift_nonlinear",
                   "linear_identity", "shift_predicted", "shift_measured"])
    eigen.add(seed=0, E0=E0, hj_spread=spread, norm_drift_linear=drift_lin,
              norm_drift_nonlinear=drift_nl, linear_identity=identity,
              shift_predicted=predicted, shift_measured=measured)
    snap = Table(["seed", "x", "re_psi", "im_psi", "rho", "S_masked"])
    phase = np.angle(nonlinear.psi)
    for x, v, r, s in zip(z, nonlinear.psi, nonlinear.rho, phase):
        snap.add(seed=0, x=float(x), re_psi=float(v.real), im_psi=float(v.imag), rho=float(r),
                 S_masked=float(consts.hbar * s) if r >= 1e-12 else None)
    report.tables = {"eigen": eigen, "snapshot": snap}
    exact = 0.5 * consts.hbar * cfg.potential["omega"] if cfg.potential["name"] == "harmonic" else None
    report.flags = [
        check("ground_energy", None if exact is None else abs(E0 - exact), thr["ground_energy"],
              exact is not None and abs(E0 - exact) <= thr["ground_energy"], f"E0={E0:.8g}"),
        check("hj_constancy", spread, thr["hj_constancy"], spread <= thr["hj_constancy"]),
        check("norm_drift", max(drift_lin, drift_nl), thr["norm_drift"],
              max(drift_lin, drift_nl) <= thr["norm_drift"]),
        check("linear_identity", identity, thr["linear_identity"],
              identity <= thr["linear_identity"]),
        check("shift_consistency", consistency, thr["shift_consistency"],
              consistency is not None and consistency <= thr["shift_consistency"]),
    ]
    report.counts = {"steps": steps, "grid_points": int(z.size)}
    return report


def _medians_table(table, seeds):
    out = Table(["seeds", "N", "median_discrepancy", "median_discrete", "continuum_value"])
    med = table.medians()
    disc = table.medians("discrete_value")
    cont = table.medians("continuum_value")
    label = ",".join(str(s) for s in seeds)
    for N in table.N_values():
        out.add(seeds=label, N=N, median_discrepancy=med[N], median_discrete=disc[N],
                continuum_value=cont[N])
    return out


def _sweep_report(cfg, table, final_threshold):
    report = RunReport(cfg.scenario, cfg.hash)
    rows = Table(list(table.rows[0].keys()) if table.rows else
                 ["N", "seed", "R", "r_prime", "discrete_value", "continuum_value",
                  "rel_discrepancy"])
    for row in table.rows:
        rows.add(**row)
    report.tables = {"convergence": rows, "medians": _medians_table(table, cfg.seeds)}
    if not table.rows:
        report.flags = [check("monotone_decrease", None, True, True),
                        check("final_discrepancy", None, final_threshold, True)]
        return report
    med = table.medians()
    values = list(med.values())
    flat = all(v <= 1e-12 for v in values)
    decreasing = flat or table.is_decreasing()
    final = values[-1]
    report.flags = [
        check("monotone_decrease", decreasing, True, decreasing,
              " > ".join(f"{v:.4g}" for v in values)),
        check("final_discrepancy", final, final_threshold, final <= final_threshold),
    ]
    report.counts = {"cells": len(table.rows)}
    return report


def run_continuum_sweep(cfg, map_fn=map):
    p = cfg.params
    table = discrete_vs_continuum(density_spec(cfg), cfg.N_list, cfg.seeds, p["r_prime"],
                                  cfg.constants["dim"], cfg.cutoffs["A"],
                                  p["include_correction"], map_fn=map_fn)
    return _sweep_report(cfg, table, cfg.thresholds["final_discrepancy"])


class ActionField:
    """Picklable S(x) for the kinetic-energy sweep."""

    def __init__(self, kind, p0=0.0, hbar=1.0):
        self.kind, self.p0, self.hbar = kind, p0, hbar

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return self.p0 * x
        if self.kind == "sine":
            return self.hbar * np.sin(x)
        return np.zeros_like(x)


def run_ke_sweep(cfg, map_fn=map):
    p = cfg.params
    S = ActionField(p["action"], p["p0"], cfg.constants["hbar"])
    table = ke_continuum_check(density_spec(cfg), S, cfg.N_list, cfg.seeds, p["r_prime"],
                               cfg.physical_constants(), map_fn=map_fn)
    return _sweep_report(cfg, table, cfg.thresholds["final_discrepancy"])


def run_energy_shift_sweep(cfg, map_fn=map):
    report = RunReport(cfg.scenario, cfg.hash)
    consts = cfg.physical_constants()
    z = oracle_grid(cfg)
    psi0, E0 = ground_state(external_potential(cfg).on_grid(z), z, consts)
    p = cfg.params
    scaling = energy_shift_scaling(psi0, cfg.N_list, p["r_prime"], 1, consts)
    table = Table(["seed", "N", "r_prime", "energy_shift", "relative_shift", "estimate"])
    for N, shift in zip(scaling.N, scaling.shifts):
        table.add(seed=0, N=int(N), r_prime=p["r_prime"], energy_shift=float(shift),
                  relative_shift=float(shift / E0), estimate=1.0 / float(N) ** 2)
    report.tables = {"energy_shift": table}
    thr = cfg.thresholds
    slope_ok = abs(scaling.slope + 2.0) <= thr["slope_tol"]
    report.flags.append(check("slope", scaling.slope, -2.0, slope_ok, f"tolerance {thr['slope_tol']}"))
    ref = p["reference_N"]
    if ref in cfg.N_list:
        shift = float(scaling.shifts[cfg.N_list.index(ref)])
        ratio = abs(shift / E0) / (1.0 / ref**2)
        ok = 1.0 / thr["ratio_factor"] <= ratio <= thr["ratio_factor"]
        report.flags.append(check("estimate_ratio", ratio, thr["ratio_factor"], ok,
                                  f"|dE/E0| over 1/N^2 at N={ref}"))
    else:
        report.flags.append(check("estimate_ratio", None, thr["ratio_factor"], True,
                                  "reference N not in N_list"))
    report.counts = {"E0": E0}
    return report


def _equilibration_cell(args):
    cfg, seed = args
    consts = cfg.physical_constants()
    state = sample_ensemble(density_spec(cfg), cfg.N, seed, consts, cutoff_params(cfg))
    integ = cfg.integrator
    member = cfg.params["member"]
    try:
        record = run_dynamics(state, external_potential(cfg), integ["dt"], integ["steps"],
                              None, integ["gamma"], integ["record_every"],
                              smooth_cutoff=integ["smooth_cutoff"], seed=seed)
        failure = None
    except DynamicsAborted as exc:
        record = exc.trajectory
        failure = f"seed {seed}: dynamics aborted at step {exc.step} (t={exc.time:.6g})"
    track = record.member_track(member)
    series = None
    if failure is None:
        series = equilibration_metric(track, member, density_spec(cfg), cfg.params["windows"],
                                      cfg.params["bins"])
    return seed, record.steps, series, failure


def run_equilibration(cfg, map_fn=map):
    report = RunReport(cfg.scenario, cfg.hash)
    table = Table(["seed", "window", "tv_distance"])
    summary = Table(["seed", "completed_steps", "slope", "note"])
    slopes, failures = [], []
    for seed, done, series, failure in map_fn(_equilibration_cell,
                                              [(cfg, s) for s in _seeds(cfg)]):
        slope = None
        if series is not None:
            slope = trend_slope(series)
            slopes.append(slope)
            for w, tv in enumerate(series):
                table.add(seed=seed, window=w, tv_distance=float(tv))
        else:
            failures.append(failure)
        summary.add(seed=seed, completed_steps=done, slope=slope, note=failure or "")
    report.tables = {"tv_series": table, "summary": summary}
    thr = cfg.thresholds["max_slope"]
    if failures:
        report.flags.append(check("tv_trend", float("nan"), thr, False, "dynamics aborted"))
        report.failure = "; ".join(failures)
    else:
        worst = max(slopes)
        report.flags.append(check("tv_trend", worst, thr, worst <= thr))
    report.counts = {"steps": cfg.integrator["steps"], "seeds": len(_seeds(cfg))}
    return report


RUNNERS = {
    "few_n": run_few_n,
    "relax": run_relax,
    "evolve_compare": run_evolve_compare,
    "continuum_sweep": run_continuum_sweep,
    "ke_sweep": run_ke_sweep,
    "energy_shift_sweep": run_energy_shift_sweep,
    "equilibration": run_equilibration,
}
