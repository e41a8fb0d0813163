"""Experiment drivers behind the command line: build problems from a RunConfig and emit artifacts.

Every driver returns an ``Outcome`` holding the artifact payloads (CSV text
or PGM bytes) and the measured constants; ``run`` writes them atomically
together with a manifest.  CSV payloads depend only on the configuration,
never on timing or thread count.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__
from ._backend import BACKEND
from ._io import atomic_write, csv_text
from .config import RunConfig, dump_config
from .errors import BudgetExhausted, ConfigError, DomainTooSmall
from .fields import (CoefficientField, SeparableField, spreading_gate, make_reaction,
                     periodic_modulation, validate_kpp)
from .grid import Grid, GridState, pgm_bytes, read_state_csv
from .local_solver import LocalProblem, check_horizon, solve


@dataclass
class Outcome:
    artifacts: dict = dc_field(default_factory=dict)  # file name -> str | bytes
    constants: dict = dc_field(default_factory=dict)
    budget_exhausted: bool = False


# ---------------------------------------------------------------------------
# builders


def build_field(cfg: RunConfig) -> CoefficientField:
    f = cfg["field"]
    drift = f["drift"] if len(f["drift"]) > 1 else f["drift"][0]
    return CoefficientField.isotropic(f["dim"], f["diffusivity"], drift, f["time_period"] or None)


def build_reaction(cfg: RunConfig):
    """``rate(t, x) = rate + a sin(k x_1) + a_t sin(2 pi t / period)`` times the catalogued shape."""
    r = cfg["reaction"]
    c, a, k, at = r["rate"], r["rate_amplitude"], r["rate_wavenumber"], r["rate_time_amplitude"]
    rmax = abs(c) + abs(a) + abs(at)
    if a == 0 and at == 0:
        return make_reaction(r["shape"], c)
    base = (lambda x: c + a * np.sin(k * x[..., 0])) if a else (lambda x: np.full(np.shape(x)[:-1], c))
    if at:
        fld = SeparableField(base, lambda x: np.full(np.shape(x)[:-1], at), periodic_modulation(r["time_period"]),
                             name="sine")
    else:
        fld = SeparableField(base, name="sine")
    return make_reaction(r["shape"], fld, rate_max=rmax)


def build_grid(cfg: RunConfig) -> Grid:
    g = cfg["grid"]
    if len(g["lo"]) != cfg["field"]["dim"]:
        raise ConfigError("grid.lo must have field.dim entries")
    return Grid.box(g["lo"], g["hi"], g["h"], g["boundary"])


def build_initial(cfg: RunConfig, grid: Grid) -> GridState:
    ini = cfg["initial"]
    pts = grid.points()
    kind = ini["kind"]
    if kind == "interval":
        lo = np.broadcast_to(np.asarray(ini["lo"], dtype=float), (grid.dim,))
        hi = np.broadcast_to(np.asarray(ini["hi"], dtype=float), (grid.dim,))
        mask = np.all((pts > lo) & (pts < hi), axis=-1)
    elif kind == "ball":
        c = np.broadcast_to(np.asarray(ini["center"], dtype=float), (grid.dim,))
        mask = np.sum((pts - c) ** 2, axis=-1) < ini["radius"] ** 2
    elif kind == "half_space":
        mask = pts[..., 0] < 0
    elif kind == "csv":
        if not ini["path"]:
            raise ConfigError("initial.path is required for kind='csv'")
        return read_state_csv(ini["path"], grid)
    else:
        raise ConfigError(f"unknown initial.kind {kind!r}")
    return GridState(grid, 0.0, np.where(mask, ini["value"], 0.0))


def build_problem(cfg: RunConfig) -> LocalProblem:
    grid = build_grid(cfg)
    return LocalProblem(build_field(cfg), build_reaction(cfg), grid, build_initial(cfg, grid))


def build_environments(cfg: RunConfig, seeds=None) -> list:
    from .homogenization import sample_environment

    e = cfg["environment"]
    seeds = cfg.seeds if seeds is None else seeds
    try:
        return [sample_environment(e["kind"], e["params"], s, dim=e["dim"], m=e["m"], M=e["M"],
                                   time_period=e["time_period"], time_amplitude=e["time_amplitude"],
                                   diffusivity=e["diffusivity"]) for s in seeds]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"environment: {exc}") from None


# ---------------------------------------------------------------------------
# drivers


def run_validate(cfg: RunConfig) -> Outcome:
    fld, r = build_field(cfg), build_reaction(cfg)
    rep = validate_kpp(r, fld)
    ok, margin = spreading_gate(r, fld)
    rows = [(name, a.passed, a.worst) for name, a in sorted(rep.axioms.items())]
    out = Outcome()
    out.artifacts["validate.csv"] = csv_text(["axiom", "passed", "worst"], rows, [f"gate_margin={margin!r}"])
    out.artifacts["psi.csv"] = csv_text(["u", "psi", "f_inf"], zip(rep.u, rep.psi, rep.f_inf))
    out.constants.update(passed=rep.passed, gate_ok=ok, gate_margin=margin, slope_inf=rep.slope_inf,
                         slope_sup=rep.slope_sup)
    return out


def run_solve(cfg: RunConfig) -> Outcome:
    from .fronts import track

    p = build_problem(cfg)
    s = cfg["solve"]
    check_horizon(p, s["t_end"])
    traj = solve(p, s["t_end"], s["cadence"])
    out = Outcome()
    out.constants.update(traj.manifest())
    if p.grid.dim == 1:
        ft = track(traj, s["theta"], t_min=min(20.0, s["t_end"] / 2), log_term=True)
        out.artifacts["front.csv"] = ft.csv()
        out.constants.update(speed=ft.speed, log_coeff=ft.log_coeff, offset=ft.offset)
    else:
        rows = [(t, float(v.sum()) * p.grid.h ** 2, float(v.max())) for t, v in zip(traj.times, traj.snapshots)]
        out.artifacts["mass.csv"] = csv_text(["t", "mass", "max"], rows)
        out.artifacts["final.pgm"] = pgm_bytes(traj.final)
    if s["snapshots"]:
        pts = p.grid.points().reshape(-1, p.grid.dim)
        cols = ["x", "y"][: p.grid.dim]
        rows = [(t, *x, v) for t, snap in zip(traj.times, traj.snapshots) for x, v in zip(pts, snap.reshape(-1))]
        out.artifacts["snapshots.csv"] = csv_text(["t"] + cols + ["value"], rows)
    return out


def run_vlin(cfg: RunConfig) -> Outcome:
    from .virtual_linearity import run_monotone_variant, run_sandwich

    p = build_problem(cfg)
    v = cfg["vlin"]
    kw = dict(variant=v["variant"], shift_rule=v["shift_rule"], cube_scale=v["cube_scale"], cadence=v["cadence"],
              tau_delta=v["tau_delta"])
    rep = (run_monotone_variant if v["monotone"] else run_sandwich)(p, v["delta"], v["t_end"], **kw)
    out = Outcome()
    out.artifacts["sandwich.csv"] = rep.csv()
    out.constants.update(phi_end=float(rep.phi_est[-1]), burn_in=rep.burn_in,
                         non_increasing=rep.non_increasing_after(), members=rep.members,
                         max_lower=float(rep.lower_violation.max()), clamp_max=rep.clamp_max, **rep.constants)
    return out


def run_sharpness(cfg: RunConfig) -> Outcome:
    from .fronts import sharpness_run

    s = cfg["sharpness"]
    rep = sharpness_run(s["b_bar"], s["delta"], s["t_end"], h=s["h"], t_min=s["t_min"],
                        times=s["times"] or None, reaction=build_reaction(cfg))
    out = Outcome()
    out.artifacts["sharpness.csv"] = rep.csv()
    out.constants.update(lower_end=float(rep.lower_expr[-1]), upper_end=float(rep.upper_expr[-1]),
                         fit=list(rep.fit))
    return out


def run_subsolution(cfg: RunConfig) -> Outcome:
    from .subsolution import build_ladder, build_profile, choose_v0, ladder_ordering, ride_ladder, verify_subsolution

    s = cfg["subsolution"]
    pr = build_profile(s["beta"], s["lam"], s["B"])
    fld, r = build_field(cfg), build_reaction(cfg)
    rep = validate_kpp(r, fld)
    v0 = s["v0"] or min(choose_v0(pr, rep.u, rep.psi), 0.25)

    def f0(u):
        # sampled lower envelope of the reaction, kept strictly positive inside (0, 1)
        return np.interp(u, rep.u, np.maximum(rep.f_inf, 1e-12 * np.minimum(rep.u, 1 - rep.u)))

    ladder = build_ladder(pr, f0, s["v"], v0, max(1.0, r.lipschitz_bound))
    half = pr.anchors[3] + pr.q * float(ladder.times[min(s["k_max"], ladder.K)]) + 20.0
    g = Grid.box([-half], [half], s["h"])
    p = LocalProblem(fld, r, g, g.zeros())
    rows = []
    for k in range(0, min(s["k_max"], ladder.K) + 1):
        t0 = ladder.start_time(k)
        res = verify_subsolution(ladder.members[k], p, (t0, t0 + 2 * ladder.sigma), n_times=21)
        rows.append((k, t0, res.min_residual, res.min_outer, res.min_inner))
    order = ladder_ordering(ladder, g, s["k_max"])
    ride = ride_ladder(ladder, p, s["k_max"])
    out = Outcome()
    ys = np.linspace(pr.anchors[0] - 1.0, pr.anchors[3] + 1.0, 2001)
    out.artifacts["profile.csv"] = csv_text(["y", "xi", "zeta"], zip(ys, pr.xi(ys), pr.zeta(ys)),
                                            [f"anchors={list(pr.anchors)!r}", f"C={pr.C!r}", f"p={pr.p!r}",
                                             f"q={pr.q!r}"])
    out.artifacts["ladder.csv"] = csv_text(["k", "v_k", "t_vk"],
                                           [(k, ladder.levels[k], ladder.times[k]) for k in range(ladder.K + 1)],
                                           [f"v={ladder.v!r}", f"v0={ladder.v0!r}", f"sigma={ladder.sigma!r}"])
    out.artifacts["residuals.csv"] = csv_text(["k", "t_start", "min_residual", "min_outer", "min_inner"], rows)
    out.artifacts["ordering.csv"] = csv_text(["k", "ordering_violation", "ride_violation"],
                                             [(k + 1, o, ride[k] if k < ride.size else float("nan"))
                                              for k, o in enumerate(order)])
    out.constants.update(K=ladder.K, sigma=ladder.sigma, min_residual=min(r_[2] for r_ in rows),
                         max_ordering=float(order.max(initial=0.0)), max_ride=float(ride.max(initial=0.0)),
                         margin=pr.margin)
    return out


def run_nonlocal(cfg: RunConfig) -> Outcome:
    from .fronts import track
    from .nonlocal_solver import KERNELS, nonlocal_stable_dt, solve_nonlocal

    n = cfg["nonlocal"]
    grid = build_grid(cfg)
    if n["kernel"] not in KERNELS:
        raise ConfigError(f"unknown nonlocal.kernel {n['kernel']!r}; choose one of {', '.join(sorted(KERNELS))}")
    opts = {"box": dict(radius=n["radius"], alpha=n["alpha"]), "exp_tail": dict(alpha=n["alpha"], s=0.0),
            "fractional_cutoff": dict(s=n["s"], cutoff=n["radius"])}.get(n["kernel"], {})
    k = KERNELS[n["kernel"]](grid.dim, **opts)
    r = build_reaction(cfg)
    u0 = build_initial(cfg, grid)
    runs = [None] if not n["dt_halving"] else [None, 0.5]
    out = Outcome()
    # the monotone limit leaves an O(dt) speed bias of tens of percent; run well below it
    dt0 = nonlocal_stable_dt(k, r, grid, n["eps_tail"]) * n["dt_fraction"]
    speeds = []
    for factor in runs:
        dt = dt0 if factor is None else dt0 * factor
        traj = solve_nonlocal(k, r, grid, u0, n["t_end"], n["cadence"], dt=dt, eps_tail=n["eps_tail"])
        name = "front.csv" if factor is None else "front_half_dt.csv"
        if grid.dim == 1:
            ft = track(traj, 0.5, t_min=n["t_end"] / 2, log_term=False)
            out.artifacts[name] = ft.csv()
            speeds.append(ft.speed)
        out.constants[f"dt{'' if factor is None else '_half'}"] = dt
    if speeds:
        out.constants["speed"] = speeds[0]
        if len(speeds) > 1:
            out.constants.update(speed_half_dt=speeds[1], speed_rel_change=abs(speeds[1] - speeds[0]) / speeds[0])
    return out


def _tau_rows(taus, directions, n_list, seeds):
    for s_i, seed in enumerate(seeds):
        for d_i, e in enumerate(directions):
            for n_i, n in enumerate(n_list):
                yield (float(e[0]), float(e[1]), int(n), int(seed), taus[s_i, d_i, n_i])


def run_wulff(cfg: RunConfig) -> Outcome:
    from .homogenization import halfplane_speed, wulff

    w = cfg["wulff"]
    envs = build_environments(cfg)
    W = wulff(envs, w["directions"], w["n_list"], h=w["h"], window=w["window"], threads=cfg.threads)
    out = Outcome()
    out.artifacts["taus.csv"] = csv_text(["e_x", "e_y", "n", "seed", "tau"],
                                         _tau_rows(W.taus, W.directions, w["n_list"], W.seeds))
    out.artifacts["speeds.csv"] = W.csv()
    out.artifacts["polygon.csv"] = W.polygon_csv()
    out.constants.update(speeds=W.speeds.tolist(), convexity_defect=W.convexity_defect(),
                         support_e1=W.support((1.0, 0.0)), support_e2=W.support((0.0, 1.0)))
    if w["halfplane_t_end"] > 0:
        rows = []
        for e in ((1.0, 0.0), (0.0, 1.0)):
            hp = [halfplane_speed(env, e, w["halfplane_t_end"], h=w["h"]).speed for env in envs]
            rows += [(e[0], e[1], env.seed, s, W.support(e)) for env, s in zip(envs, hp)]
        out.artifacts["halfplane.csv"] = csv_text(["e_x", "e_y", "seed", "direct_speed", "support_speed"], rows)
    out.budget_exhausted = bool(np.isnan(W.taus).any())
    return out


def _lattice_table(env, spacing: float, h: float):
    """Passage times from a 3x3 lattice of sources to nearby points, plus collinear triples along x."""
    from .homogenization import passage_times

    offs = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (2, 0), (0, 2), (3, 0)]
    entries = []
    for sx in (-spacing, 0.0, spacing):
        for sy in (-spacing, 0.0, spacing):
            src = np.array([sx, sy])
            entries += passage_times(env, src, [src + np.array(o) for o in offs], h=h).entries
    for src in ((0.0, 0.0), (2.0, 0.0), (4.0, 0.0)):
        entries += passage_times(env, src, [(float(k), 0.0) for k in range(0, 9)], h=h).entries
    return entries


def run_homogenize(cfg: RunConfig) -> Outcome:
    from .homogenization import (InitialSet, PassageTimeTable, check_tau_laws, pool_map, rescaled_convergence,
                                 shift_pair, speed_bounds, wulff)

    hz = cfg["homogenize"]
    envs = build_environments(cfg)
    out = Outcome()
    if hz["tau_laws"]:
        tables = pool_map(lambda env: _lattice_table(env, hz["lattice"], hz["h"]), envs, cfg.threads)
        pairs = pool_map(lambda env: [shift_pair(env, (3.0, 0.0), (0.0, 0.0), (4.0, 0.0), h=hz["h"]),
                                      shift_pair(env, (0.0, 5.0), (1.0, 0.0), (1.0, 4.0), h=hz["h"])],
                         envs, cfg.threads)
        rows, all_entries = [], []
        for env, entries, pr in zip(envs, tables, pairs):
            rep = check_tau_laws(PassageTimeTable(entries=list(entries)), pr)
            rows.append((env.seed, rep.triples, rep.max_subadditivity_violation, rep.C_fit, rep.lipschitz_fit,
                         rep.shift_pairs, rep.shift_exact))
            all_entries += entries
        out.artifacts["passage_times.csv"] = PassageTimeTable(entries=all_entries).csv()
        out.artifacts["tau_laws.csv"] = csv_text(["seed", "triples", "max_violation", "C_fit", "lipschitz",
                                                  "shift_pairs", "shift_exact"], rows)
        Cs = [r[3] for r in rows]
        out.constants.update(C_fit=Cs, max_subadditivity_violation=max(r[2] for r in rows),
                             shift_exact=all(r[6] for r in rows))
        out.budget_exhausted |= any(e.status == "budget" for e in all_entries)
    W = None
    if hz["speeds"]:
        W = wulff(envs, hz["directions"], hz["n_list"], h=hz["h"], threads=cfg.threads)
        out.artifacts["taus.csv"] = csv_text(["e_x", "e_y", "n", "seed", "tau"],
                                             _tau_rows(W.taus, W.directions, hz["n_list"], W.seeds))
        out.artifacts["speeds.csv"] = W.csv()
        out.artifacts["polygon.csv"] = W.polygon_csv()
        out.constants.update(speeds=W.speeds.tolist(), convexity_defect=W.convexity_defect())
        if hz["tau_laws"]:
            c, ok = speed_bounds(W, max(out.constants["C_fit"]), min(env.gamma for env in envs), envs[0].dim)
            out.constants.update(speed_bound_c=c, speed_bounds_ok=ok)
        out.budget_exhausted |= bool(np.isnan(W.taus).any())
    if hz["rescaled"]:
        if W is None:
            raise ConfigError("homogenize.rescaled needs homogenize.speeds = true")
        G = InitialSet(hz["set"], hz["set_radius"])
        maps = {} if hz["heatmaps"] else None
        tab = rescaled_convergence(envs[0], G, hz["epsilons"], hz["T_list"], W, collar=hz["collar"], h=hz["h"],
                                   heatmaps=maps)
        out.artifacts.update(maps or {})
        out.artifacts["rescaled.csv"] = tab.csv()
        out.constants["rescaled_non_increasing"] = {str(t): tab.non_increasing(t) for t in hz["T_list"]}
        out.budget_exhausted |= tab.partial
    return out


DRIVERS = {"validate": run_validate, "solve": run_solve, "vlin": run_vlin, "sharpness": run_sharpness,
           "subsolution": run_subsolution, "nonlocal": run_nonlocal, "wulff": run_wulff,
           "homogenize": run_homogenize}


# ---------------------------------------------------------------------------
# orchestration


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def run(cfg: RunConfig, out_dir: str | None = None) -> tuple:
    """Run the configured experiment; returns ``(exit_code, out_dir, outcome)``.

    Raises ConfigError, NumericalInstability or BudgetExhausted for the
    caller to map to exit codes; artifacts are written before a budget
    exhaustion is reported.
    """
    out_dir = out_dir or cfg.out
    start = time.perf_counter()
    try:
        outcome = DRIVERS[cfg.experiment](cfg)
    except DomainTooSmall as exc:
        raise ConfigError(f"domain too small: {exc}") from None
    elapsed = time.perf_counter() - start
    digests = {}
    for name, payload in sorted(outcome.artifacts.items()):
        atomic_write(os.path.join(out_dir, name), payload)
        raw = payload.encode("utf-8") if isinstance(payload, str) else payload
        digests[name] = hashlib.sha256(raw).hexdigest()
    manifest = {
        "experiment": cfg.experiment,
        "version": __version__,
        "backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "seeds": cfg.seeds,
        "threads": cfg.threads,
        "elapsed_seconds": elapsed,
        "constants": _jsonable(outcome.constants),
        "artifacts": digests,
        "budget_exhausted": outcome.budget_exhausted,
        "config": dump_config(cfg),
    }
    atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if outcome.budget_exhausted:
        raise BudgetExhausted(f"budget exhausted; partial results in {out_dir}")
    return 0, out_dir, outcome
