"""``cplnet`` command line: analyze, sweep-r, sweep-n, simulate, design, gains.

Exit codes: 0 success, 2 configuration error, 3 model or feasibility error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import (
    ConfigError,
    RunConfig,
    parse_coupling,
    as_int,
    as_floats,
    as_float,
    parse_op_mode,
    float_grid,
    load_config,
    parse_design,
    resolve_gains,
)
from .model import ConvergenceError, ModelError
from .output import line_chart, write_csv
from .simulate import (
    OpenLoop,
    Proportional,
    SimConfig,
    SimulationDiverged,
    StateFeedback,
    simulate,
    trace_metrics,
)
from .smallsignal import InputShuntC, eigenvalues, is_stable

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_NUMERIC = 0, 2, 3, 4


@contextmanager
def _mapper(jobs: int):
    if jobs <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield lambda fn, items: pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs)))


def _model_opts(block: dict, name: str) -> dict:
    return {
        "coupling": parse_coupling(block.get("coupling", "paper_exact"), f"{name}.coupling"),
        "op_mode": parse_op_mode(block.get("op_mode", "nominal"), f"{name}.op_mode"),
    }


def cmd_analyze(cfg: RunConfig, out: Path, jobs: int) -> int:
    b = cfg.block("analyze", {"coupling", "op_mode", "design"})
    opts = _model_opts(b, "analyze")
    design = parse_design(b.get("design"), "analyze.design")
    gains = resolve_gains(cfg.controller, cfg.spec)
    ss = an.closed_loop_model(cfg.spec, gains, design=design, **opts)
    spec = eigenvalues(ss.A)
    write_csv(
        out / "eigenvalues.csv",
        ["index", "real", "imag"],
        ((j, lam.real, lam.imag) for j, lam in enumerate(spec.eigenvalues)),
    )
    verdict = "STABLE" if is_stable(spec) else "UNSTABLE"
    print(f"{verdict} max_real={spec.max_real_part:.6g}")
    return EXIT_OK


def _search_opts(b: dict, name: str) -> dict:
    R_max = as_float(b.get("R_max_search", 10.0), f"{name}.R_max_search", positive=True)
    tol = as_float(b.get("tol", 1e-6), f"{name}.tol", positive=True)
    pts = as_int(b.get("grid_points", 1000), f"{name}.grid_points", 2)
    return {"R_max_search": R_max, "tol": tol, "grid_points": pts}


def _boundary_outputs(out: Path, bnd: an.StabilityBoundary, title: str) -> None:
    write_csv(
        out / "boundary.csv",
        ["n", "R_star", "bracket_lo", "bracket_hi", "evaluations", "multiple_crossings"],
        (
            (n, s.R_star, s.bracket[0], s.bracket[1], s.evaluations, s.multiple_crossings)
            for (n, _), s in zip(bnd.points, bnd.searches)
        ),
    )
    ns = [n for n, _ in bnd.points]
    rs = [r for _, r in bnd.points]
    line_chart(
        out / "boundary.svg",
        [("R_star", ns, rs)],
        title=title,
        xlabel="number of converters n",
        ylabel="R_star (ohm)",
        markers=True,
    )


def _boundary(cfg: RunConfig, b: dict, name: str, n_values, jobs: int) -> an.StabilityBoundary:
    opts = _model_opts(b, name)
    search = _search_opts(b, name)
    gains = resolve_gains(cfg.controller, cfg.spec)
    if len(set(gains.gains)) != 1 and set(n_values) != {cfg.spec.n}:
        raise ConfigError(f"{name}: resizing the feeder needs identical gains on every converter")
    g = gains.gains[0] if set(n_values) != {cfg.spec.n} else gains
    with _mapper(jobs) as map_fn:
        return an.stability_boundary(
            cfg.spec, g, n_values, search["R_max_search"], search["tol"],
            grid_points=search["grid_points"], map_fn=map_fn, **opts,
        )


def cmd_sweep_r(cfg: RunConfig, out: Path, jobs: int) -> int:
    b = cfg.block("sweep_r", {"n_values", "R_max_search", "tol", "grid_points", "coupling", "op_mode"})
    n_values = [as_int(v, f"sweep_r.n_values[{j}]", 1) for j, v in enumerate(b.get("n_values", [cfg.spec.n]))]
    if not n_values:
        raise ConfigError("sweep_r.n_values: must not be empty")
    bnd = _boundary(cfg, b, "sweep_r", n_values, jobs)
    _boundary_outputs(out, bnd, "Stability boundary in line resistance")
    rows = []
    for (n, _), s in zip(bnd.points, bnd.searches):
        rows += [(n, R, m, m < 0) for R, m in zip(s.grid_R, s.grid_max_real)]
    write_csv(out / "grid.csv", ["n", "R", "max_real", "stable"], rows)
    for n, r in bnd.points:
        print(f"n={n} R_star={r:.9g}")
    return EXIT_OK


def cmd_sweep_n(cfg: RunConfig, out: Path, jobs: int) -> int:
    b = cfg.block(
        "sweep_n", {"n_values", "R_values", "n_max", "R_max_search", "tol", "grid_points", "coupling", "op_mode"}
    )
    raw_n = b.get("n_values", list(range(2, 9)))
    if not isinstance(raw_n, list) or not raw_n:
        raise ConfigError("sweep_n.n_values: must be a non-empty list")
    n_values = [as_int(v, f"sweep_n.n_values[{j}]", 1) for j, v in enumerate(raw_n)]
    R_values = as_floats(b["R_values"], "sweep_n.R_values", positive=True) if "R_values" in b else []
    n_max = as_int(b.get("n_max", 50), "sweep_n.n_max", 1)
    bnd = _boundary(cfg, b, "sweep_n", n_values, jobs)
    _boundary_outputs(out, bnd, "Stability boundary versus feeder size")

    opts = _model_opts(b, "sweep_n")
    gains = resolve_gains(cfg.controller, cfg.spec)
    if R_values and len(set(gains.gains)) != 1:
        raise ConfigError("sweep_n.R_values: resizing the feeder needs identical gains on every converter")
    grid_rows, crit_rows = [], []
    for R in R_values:
        c = an.critical_n(cfg.spec, gains.gains[0], R, n_max, **opts)
        grid_rows += [(R, n, m, m < 0) for n, m in enumerate(c.max_real_parts, start=1)]
        crit_rows.append((R, c.N0 if c.found else None, c.found))
        print(f"R={R:.9g} N0={c.N0 if c.found else 'none'}")
    write_csv(out / "grid.csv", ["R", "n", "max_real", "stable"], grid_rows)
    write_csv(out / "critical_n.csv", ["R", "N0", "found"], crit_rows)
    for n, r in bnd.points:
        print(f"n={n} R_star={r:.9g}")
    return EXIT_OK


def _sim_controller(cfg: RunConfig):
    c = cfg.controller
    if c.type == "open_loop":
        return OpenLoop(c.D)
    if c.type == "proportional":
        return Proportional(c.k_p, c.v_ref)
    return StateFeedback(resolve_gains(c, cfg.spec))


def cmd_simulate(cfg: RunConfig, out: Path, jobs: int) -> int:
    b = cfg.block(
        "simulate",
        {"model", "t_end", "dt", "initial_state", "design", "coupling", "record_every", "decimate", "window", "plot"},
    )
    spec = cfg.spec
    model = b.get("model", "switched")
    if model not in ("switched", "averaged"):
        raise ConfigError(f"simulate.model: expected 'switched' or 'averaged', got {model!r}")
    t_end = as_float(b.get("t_end", 20e-3), "simulate.t_end", positive=True)
    dt = as_float(b["dt"], "simulate.dt", positive=True) if b.get("dt") is not None else None
    design = parse_design(b.get("design"), "simulate.design")
    ini = None
    if b.get("initial_state") is not None:
        ini = tuple(tuple(as_floats(s, f"simulate.initial_state[{j}]")) for j, s in enumerate(b["initial_state"]))
    sim = SimConfig(
        model=model,
        t_end=t_end,
        dt=dt,
        controller=_sim_controller(cfg),
        initial_state=ini,
        design=design,
        coupling=parse_coupling(b.get("coupling", "paper_exact"), "simulate.coupling"),
        record_every=as_int(b.get("record_every", 1), "simulate.record_every", 1),
    )
    step = sim.step(spec)
    if model == "switched" and step > min(c.T for c in spec.converters) / 50 * (1 + 1e-12):
        raise ConfigError("simulate.dt: switched runs need dt <= T/50")
    if not t_end > step:
        raise ConfigError("simulate.t_end: must exceed dt")
    decimate = as_int(b.get("decimate", 10 if model == "switched" else 1), "simulate.decimate", 1)
    window = as_floats(b["window"], "simulate.window", nonneg=True) if "window" in b else [0.8 * t_end, t_end]
    if len(window) != 2 or window[1] < window[0]:
        raise ConfigError("simulate.window: need [t1, t2] with t1 <= t2")

    diverged = None
    try:
        trace = simulate(spec, sim)
    except SimulationDiverged as e:
        trace, diverged = e.trace, e
    trace_out = trace.decimate(decimate)
    write_csv(out / "trace.csv", trace_out.columns, trace_out.data.tolist())

    plot = b.get("plot", [f"V{k}" for k in range(1, spec.n + 1)])
    if not isinstance(plot, list) or not plot or any(p not in trace.columns[1:] for p in plot):
        raise ConfigError(f"simulate.plot: choose from {list(trace.columns[1:])}")
    line_chart(
        out / "trace.svg",
        [(p, trace.t, trace[p]) for p in plot],
        title=f"{model} simulation",
        xlabel="time (s)",
        ylabel=", ".join(plot),
    )
    if diverged is not None:
        print(f"error: {diverged}", file=sys.stderr)
        return EXIT_NUMERIC
    m = trace_metrics(trace, window)
    rows = [
        (name, s.pkpk, s.mean, s.min, s.max, m.shutoff_events.get(name))
        for name, s in m.signals.items()
    ]
    write_csv(out / "metrics.csv", ["signal", "pkpk", "mean", "min", "max", "shutoff_events"], rows)
    for k in range(1, spec.n + 1):
        s = m.signals[f"V{k}"]
        print(f"V{k} pkpk={s.pkpk:.6g} mean={s.mean:.6g} shutoffs={m.shutoff_events[f'Iload{k}']}")
    return EXIT_OK


_REPORT_HEADER = [
    "variant", "parameter", "kind", "R", "max_real", "stable",
    "loss_watts", "efficiency", "R_star", "C_s_star", "certified",
]


def _param(design) -> str:
    fields = {k: getattr(design, k) for k in design.__dataclass_fields__}
    return ";".join(f"{k}=%.17g" % v for k, v in fields.items())


def _report_rows(name: str, rep: an.DesignReport, param: str):
    yield (
        name, param, "summary", None, None, rep.stable, rep.loss_watts, rep.efficiency,
        rep.R_star, rep.C_s_star, rep.certified,
    )
    for R, m, ok in rep.verdicts:
        yield (name, param, "verdict", R, m, ok, None, None, None, None, None)


def cmd_design(cfg: RunConfig, out: Path, jobs: int) -> int:
    b = cfg.block(
        "design",
        {"variant", "R_s_grid", "rc_grid", "R_set", "Cs_bracket", "rel_tol", "R_max_search", "tol", "grid_points"},
    )
    spec = cfg.spec
    gains = resolve_gains(cfg.controller, spec)
    R_set = float_grid(b.get("R_set"), "design.R_set", an.default_R_set())
    if R_set.size == 0 or np.any(R_set <= 0):
        raise ConfigError("design.R_set: need positive resistances")
    variant = b.get("variant", "input_shunt_c")
    rows = []
    if variant == "output_shunt":
        Vn2_over_P = np.mean([ld.V_nominal**2 / ld.P for ld in spec.loads if ld.P > 0] or [1.0])
        grid = float_grid(b.get("R_s_grid"), "design.R_s_grid", np.geomspace(0.1, 2.0, 20) * Vn2_over_P)
        if np.any(grid <= 0):
            raise ConfigError("design.R_s_grid: need positive values")
        best, reports = an.least_lossy_stabilizing_shunt(spec, gains, grid, R_set)
        for rep in reports:
            rows += list(_report_rows(variant, rep, _param(rep.variant)))
        if best is None:
            print("no certified output shunt on the grid")
        else:
            print(f"R_s={best.variant.R_s:.9g} efficiency={best.efficiency:.9g}")
    elif variant == "input_rc":
        raw = b.get("rc_grid", [[R_f, C_f] for R_f in (0.1, 1.0, 10.0) for C_f in (1e-6, 1e-5, 1e-4)])
        pairs = [as_floats(p, f"design.rc_grid[{j}]", positive=True) for j, p in enumerate(raw)]
        if not pairs or any(len(p) != 2 for p in pairs):
            raise ConfigError("design.rc_grid: need a non-empty list of [R_f, C_f]")
        search = _search_opts(b, "design")
        for R_f, C_f in pairs:
            rep = an.evaluate_input_rc(spec, gains, R_f, C_f, search["R_max_search"], search["tol"],
                                       grid_points=search["grid_points"])
            rows += list(_report_rows(variant, rep, _param(rep.variant)))
            print(f"R_f={R_f:.6g} C_f={C_f:.6g} R_star={rep.R_star:.9g}")
    elif variant == "input_shunt_c":
        br = as_floats(b.get("Cs_bracket", [1e-9, 1.0]), "design.Cs_bracket", positive=True)
        if len(br) != 2 or not br[0] < br[1]:
            raise ConfigError("design.Cs_bracket: need [lo, hi] with lo < hi")
        rel = as_float(b.get("rel_tol", 1e-3), "design.rel_tol", positive=True)
        try:
            rep = an.min_stabilizing_Cs(spec, gains, R_set, tuple(br), rel_tol=rel)
            rows += list(_report_rows(variant, rep, _param(rep.variant)))
            print(f"C_s_star={rep.C_s_star:.9g}")
        except an.NotStabilizable as e:
            verdicts = an.certify_design(spec, gains, InputShuntC(br[1]), R_set)
            rep = an.DesignReport(InputShuntC(br[1]), False, certified=False, verdicts=verdicts)
            rows += list(_report_rows(variant, rep, _param(rep.variant)))
            print(f"NOT STABILIZABLE: {e}")
    else:
        raise ConfigError(f"design.variant: unknown design {variant!r}")
    write_csv(out / "design_report.csv", _REPORT_HEADER, rows)
    return EXIT_OK


def cmd_gains(cfg: RunConfig, out: Path, jobs: int) -> int:
    cfg.block("gains", set())
    if cfg.controller.type != "state_feedback":
        raise ConfigError("gains: the controller must be state_feedback")
    gains = resolve_gains(cfg.controller, cfg.spec)
    gains.save(out / "gains.json")
    ss = an.closed_loop_model(cfg.spec.with_R(0.0), gains)
    for k, g in enumerate(gains.gains, start=1):
        print(f"converter {k}: f_i={g.f_i:.17g} f_v={g.f_v:.17g}")
    print(f"closed-loop max_real={eigenvalues(ss.A).max_real_part:.6g}")
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "sweep-r": cmd_sweep_r,
    "sweep-n": cmd_sweep_n,
    "simulate": cmd_simulate,
    "design": cmd_design,
    "gains": cmd_gains,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cplnet", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for sweeps")
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, args.jobs)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, an.PreconditionError) as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
