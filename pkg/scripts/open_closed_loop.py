"""Switched-model output voltage of the bench converter, open loop and with state feedback.

Writes ``open_closed_loop.csv`` (decimated traces), ``open_closed_loop.svg`` and
prints the steady-window ripple of each run.
"""

import argparse
from pathlib import Path

from cplnet.control import design_network_gains
from cplnet.model import NetworkSpec
from cplnet.output import line_chart, write_csv
from cplnet.simulate import OpenLoop, SimConfig, StateFeedback, simulate_switched, trace_metrics


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--t-end", type=float, default=20e-3)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    spec = NetworkSpec.uniform(1)
    runs = {
        "open_loop": OpenLoop(),
        "state_feedback": StateFeedback(design_network_gains(spec)),
    }
    window = (0.8 * args.t_end, args.t_end)
    traces = {}
    for name, ctrl in runs.items():
        tr = simulate_switched(spec, SimConfig(model="switched", t_end=args.t_end, controller=ctrl))
        m = trace_metrics(tr, window)
        s = m.signals["V1"]
        print(f"{name:15s} pk-pk {s.pkpk:8.4f} V  mean {s.mean:8.4f} V  shutoffs {m.shutoff_events['Iload1']}")
        traces[name] = tr.decimate(20)

    t = traces["open_loop"].t
    write_csv(
        args.out / "open_closed_loop.csv",
        ["t", "V_open_loop", "V_state_feedback"],
        zip(t, traces["open_loop"]["V1"], traces["state_feedback"]["V1"]),
    )
    line_chart(
        args.out / "open_closed_loop.svg",
        [(name, tr.t, tr["V1"]) for name, tr in traces.items()],
        title="Output voltage, switched model",
        xlabel="time (s)",
        ylabel="V (V)",
    )


if __name__ == "__main__":
    main()
