"""Cross-check the switched model, the averaged models and the linearization.

* period-average of the switched trace against both averaged line models
* eigenvalue sign against envelope growth of the averaged model on a feeder
  whose operating point is re-solved at each resistance
"""

import argparse
from pathlib import Path

import numpy as np

from cplnet import analysis as an
from cplnet.control import design_network_gains
from cplnet.model import CouplingConvention, NetworkSpec, solve_operating_point
from cplnet.output import line_chart, write_csv
from cplnet.simulate import SimConfig, SimulationDiverged, StateFeedback, simulate_averaged, simulate_switched, trace_metrics

PE = CouplingConvention.PAPER_EXACT


def averaging_bias(out: Path) -> None:
    rows = []
    for R in (0.0, 0.05, 0.1, 0.25, 0.5):
        spec = NetworkSpec.uniform(1, R=R)
        g = design_network_gains(spec)
        sf = StateFeedback(g, solve_operating_point(spec, PE))
        win = (2e-3, 3e-3)
        sw = trace_metrics(simulate_switched(spec, SimConfig(model="switched", t_end=3e-3, controller=sf)), win)
        row = [R, sw.signals["V1"].mean]
        for cc in CouplingConvention:
            av = simulate_averaged(spec, SimConfig(t_end=3e-3, dt=1e-7, controller=sf, coupling=cc))
            row.append(trace_metrics(av, win).signals["V1"].mean)
        rows.append(row)
        print(f"R={R:4.2f}  switched {row[1]:8.4f}  " + "  ".join(
            f"{cc.value} {v:8.4f}" for cc, v in zip(CouplingConvention, row[2:])))
    write_csv(out / "averaging_bias.csv", ["R", "switched", *(c.value for c in CouplingConvention)], rows)


def envelope_sweep(out: Path) -> None:
    spec = NetworkSpec.uniform(2)
    g = design_network_gains(spec)
    rows, series = [], []
    for R in (0.5, 0.8, 0.83, 0.9):
        m = an.max_real_at(spec, g, R, coupling=PE, op_mode="resolved")
        s = spec.with_R(R)
        op = solve_operating_point(s, PE)
        ini = tuple((op.Ibar[k], op.Vbar[k] * (1 + 1e-3 * (k + 1))) for k in range(2))
        cfg = SimConfig(t_end=10e-3, controller=StateFeedback(g, op), initial_state=ini, record_every=10)
        try:
            tr = simulate_averaged(s, cfg)
        except SimulationDiverged as e:
            tr = e.trace
        dev = np.abs(tr["V2"] - op.Vbar[1])
        k = len(dev) // 10
        rows.append((R, m, dev[:k].max(), dev[-k:].max()))
        series.append((f"R={R}", tr.t, tr["V2"]))
        print(f"R={R:4.2f}  max Re {m:10.4g}  early {dev[:k].max():.3g} V  late {dev[-k:].max():.3g} V")
    write_csv(out / "envelope.csv", ["R", "max_real", "early_dev", "late_dev"], rows)
    line_chart(out / "envelope.svg", series, title="Far-end output voltage", xlabel="time (s)", ylabel="V2 (V)")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    averaging_bias(args.out)
    envelope_sweep(args.out)


if __name__ == "__main__":
    main()
