#!/usr/bin/env python3
"""Builds the IEEE 14-bus effective-network scenario used by the tests.

Runs the pre-fault power flow on the standard 14-bus case, places each
generator's internal EMF behind its transient reactance, turns loads into
constant admittances at their pre-fault voltages and Kron-reduces the network
onto the generator internal nodes. The same EMFs and load admittances are
used for all three stages; only the branch set changes.

The stage constants use the symmetric form of the effective-network model:

    p_i  = P_gi - |E_i|^2 G_ii
    K_ij = |E_i| |E_j| |Y_ij|      (i != j, admittance phase dropped)
    d_i  = D_i / omega_R

i.e. the swing equation (2 H_i / omega_R) x'' + (D_i / omega_R) x' = A_i - ...
with the inertia normalised to one. For the slack machine 2 H_1 / omega_R is
close to one, so its dynamics are nearly unchanged by the normalisation.

Requires numpy and pypower.

    python3 tools/ieee14_fixture.py > crates/core/tests/fixtures/ieee14_en.toml
"""

import argparse
import sys

import numpy as np
from pypower.api import case14, ppoption, runpf
from pypower.makeYbus import makeYbus

NAMES = ["G1", "G2", "G3", "G4", "G5"]
R = [0.0050, 8.9916, 16.9450, 2.2604, 20.0000]
H = [185.4630, 12.9333, 1.5781, 0.0010, 0.4621]
D = [0.5000, 664.4750, 989.5800, 780.8900, 772.3950]

FAULT_OPEN = [(2, 3), (2, 4), (4, 5), (4, 9), (7, 9)]
POST_OPEN = [(2, 3), (7, 9)]

OMEGA_R = 2.0 * np.pi * 60.0

BOUNDS_LOWER = [-0.3430, 0.1110, -1.0731, -1.1704, -1.3188]
BOUNDS_UPPER = [0.3903, 2.2234, 1.1325, 1.1290, 0.7816]


def solve_power_flow():
    res, ok = runpf(case14(), ppoption(VERBOSE=0, OUT_ALL=0))
    if not ok:
        sys.exit("power flow did not converge")
    return res


def reduced_admittance(res, emf_nodes, xd, open_branches):
    base = res["baseMVA"]
    bus = res["bus"].copy()
    branch = res["branch"].copy()
    opened = {tuple(sorted(b)) for b in open_branches}
    keep = [k for k in range(len(branch))
            if tuple(sorted((int(branch[k, 0]), int(branch[k, 1])))) not in opened]
    if len(keep) != len(branch) - len(opened):
        sys.exit("an opened branch is not in the case")
    branch = branch[keep]
    v = bus[:, 7] * np.exp(1j * np.deg2rad(bus[:, 8]))
    branch[:, 0] -= 1
    branch[:, 1] -= 1
    bus0 = bus.copy()
    bus0[:, 0] -= 1
    ybus = makeYbus(base, bus0, branch)[0].toarray()
    # Constant-impedance loads at the pre-fault voltages.
    ybus += np.diag((bus[:, 2] - 1j * bus[:, 3]) / base / np.abs(v) ** 2)
    yg = 1.0 / (1j * np.asarray(xd))
    n, m = len(bus), len(emf_nodes)
    ybb = ybus.copy()
    ygb = np.zeros((m, n), complex)
    for k, b in enumerate(emf_nodes):
        ybb[b, b] += yg[k]
        ygb[k, b] = -yg[k]
    return np.diag(yg) - ygb @ np.linalg.solve(ybb, ygb.T)


def stage(y, emf, pg):
    e = np.abs(emf)
    p = pg - e ** 2 * y.real.diagonal()
    k = np.outer(e, e) * np.abs(y)
    np.fill_diagonal(k, 0.0)
    k = 0.5 * (k + k.T)
    return p, np.asarray(D, float) / OMEGA_R, k


def fmt_vec(v):
    return "[" + ", ".join(repr(float(x)) for x in v) + "]"


def emit(out, stages):
    out.write("# IEEE 14-bus effective-network scenario, generated by tools/ieee14_fixture.py\n")
    out.write("t_fault = 0.0\n")
    for name, (p, d, k) in stages:
        out.write(f"\n[{name}]\n")
        out.write(f"p = {fmt_vec(p)}\n")
        out.write(f"d = {fmt_vec(d)}\n")
        out.write("K = [\n")
        for row in k:
            out.write(f"  {fmt_vec(row)},\n")
        out.write("]\n")
    out.write("\n[bounds]\n")
    out.write(f"lower = {fmt_vec(BOUNDS_LOWER)}\n")
    out.write(f"upper = {fmt_vec(BOUNDS_UPPER)}\n")
    out.write("\n[metadata]\n")
    out.write("names = [" + ", ".join(f'"{n}"' for n in NAMES) + "]\n")
    out.write(f"H = {fmt_vec(H)}\n")
    out.write(f"D = {fmt_vec(D)}\n")
    out.write(f"r = {fmt_vec(R)}\n")
    out.write('source = "IEEE 14-bus, symmetric effective-network reduction"\n')


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--output", help="output path (default: stdout)")
    args = ap.parse_args()

    res = solve_power_flow()
    base = res["baseMVA"]
    bus, gen = res["bus"], res["gen"]
    v = bus[:, 7] * np.exp(1j * np.deg2rad(bus[:, 8]))
    nodes = gen[:, 0].astype(int) - 1
    s = (gen[:, 1] + 1j * gen[:, 2]) / base
    emf = v[nodes] + 1j * np.asarray(R) * np.conj(s / v[nodes])

    stages = []
    for name, opened in (("pre", []), ("fault", FAULT_OPEN), ("post", POST_OPEN)):
        y = reduced_admittance(res, nodes, R, opened)
        stages.append((name, stage(y, emf, s.real)))

    if args.output:
        with open(args.output, "w") as f:
            emit(f, stages)
    else:
        emit(sys.stdout, stages)


if __name__ == "__main__":
    main()
