"""Largest stable line resistance against feeder size, and the critical size at fixed R.

Uses the designed per-converter gains unchanged for every feeder size.
"""

import argparse
from pathlib import Path

from cplnet import analysis as an
from cplnet.control import design_network_gains
from cplnet.model import NetworkSpec
from cplnet.output import line_chart, write_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--n-max", type=int, default=8)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    spec = NetworkSpec.uniform(2)
    gain = design_network_gains(spec).gains[0]
    bnd = an.stability_boundary(spec, gain, range(2, args.n_max + 1))
    for n, r in bnd.points:
        print(f"n={n:2d}  R_star={r:.6g} ohm")
    write_csv(args.out / "boundary.csv", ["n", "R_star"], bnd.points)
    line_chart(
        args.out / "boundary.svg",
        [("R_star", [n for n, _ in bnd.points], [r for _, r in bnd.points])],
        title="Stability boundary",
        xlabel="number of converters n",
        ylabel="R_star (ohm)",
        markers=True,
    )

    rows = []
    for R in (0.05, 0.1, 0.25, 0.5, 1.0):
        c = an.critical_n(spec, gain, R, 50)
        rows.append((R, c.N0))
        print(f"R={R:5.2f} ohm  smallest unstable n = {c.N0 if c.found else 'none up to 50'}")
    write_csv(args.out / "critical_n.csv", ["R", "N0"], rows)


if __name__ == "__main__":
    main()
