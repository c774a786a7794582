"""Compare the three passive fixes on the two-converter feeder.

Output shunt resistor: least lossy certified value on a grid.  Input RC leg:
threshold over a grid of legs.  Input shunt capacitor: smallest value that
certifies the resistance grid, or the reason none does.
"""

import argparse
from pathlib import Path

import numpy as np

from cplnet import analysis as an
from cplnet.control import design_network_gains
from cplnet.model import NetworkSpec
from cplnet.output import write_csv
from cplnet.smallsignal import InputShuntC


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    spec = NetworkSpec.uniform(2)
    gains = design_network_gains(spec)
    R_set = an.default_R_set()
    base = an.max_stable_R(spec, gains).R_star
    print(f"no design: R_star = {base:.6g} ohm")

    V2P = spec.loads[0].V_nominal ** 2 / spec.loads[0].P
    best, reports = an.least_lossy_stabilizing_shunt(spec, gains, np.geomspace(0.1, 2.0, 40) * V2P, R_set)
    write_csv(
        args.out / "output_shunt.csv",
        ["R_s", "stable", "certified", "loss_watts", "efficiency"],
        ((r.variant.R_s, r.stable, r.certified, r.loss_watts, r.efficiency) for r in reports),
    )
    print(f"output shunt: R_s = {best.variant.R_s:.6g} ohm, efficiency {best.efficiency:.4f}")

    rows = []
    for R_f in (0.1, 1.0, 10.0):
        for C_f in (1e-6, 1e-5, 1e-4):
            rep = an.evaluate_input_rc(spec, gains, R_f, C_f)
            rows.append((R_f, C_f, rep.R_star))
            print(f"input RC R_f={R_f:5.1f} C_f={C_f:.0e}: R_star = {rep.R_star:.6g} ohm")
    write_csv(args.out / "input_rc.csv", ["R_f", "C_f", "R_star"], rows)

    try:
        rep = an.min_stabilizing_Cs(spec, gains, R_set)
        print(f"input shunt C: C_s_star = {rep.C_s_star:.4g} F")
    except an.NotStabilizable as e:
        print(f"input shunt C: {e}")
    rows = []
    for C_s in np.geomspace(1e-6, 1.0, 7):
        worst = max(an.certify_design(spec, gains, InputShuntC(C_s), R_set), key=lambda v: v[1])
        rows.append((C_s, worst[0], worst[1]))
        print(f"  C_s={C_s:.0e}: worst R {worst[0]:.4g} ohm, max Re {worst[1]:.4g}")
    write_csv(args.out / "input_shunt_c.csv", ["C_s", "worst_R", "max_real"], rows)


if __name__ == "__main__":
    main()
