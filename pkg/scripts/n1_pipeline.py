"""Compare the flow limit, the continuity solution and the Poisson oracle for n = 1."""

import argparse
import math
import time

import numpy as np

from calabiflow import kahler as K
from calabiflow import krf
from calabiflow import monge_ampere as M
from calabiflow.experiments import make_f


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--amplitude", type=float, default=0.5)
    ap.add_argument("--scheme", default="imex", choices=("imex", "explicit-rk4"))
    args = ap.parse_args()

    cgrid = K.ComplexTorusGrid(1, args.resolution)
    f = make_f(cgrid, "cos-product", args.amplitude)
    t0 = time.perf_counter()
    flow = krf.run_flow(cgrid, f, krf.FlowConfig(scheme=args.scheme))
    t1 = time.perf_counter()
    ell = M.continuity_solve(cgrid, -f)
    oracle, A = M.poisson_oracle(cgrid, -f)
    t2 = time.perf_counter()

    sup = lambda a: float(np.max(np.abs(a)))  # noqa: E731
    print(f"flow: {flow.steps} steps, t = {flow.state.t:.4f}, {t1 - t0:.2f} s")
    print(f"elliptic + oracle: {t2 - t1:.2f} s")
    print(f"|flow - continuity|   {sup(flow.u - ell.u):.3e}")
    print(f"|flow - oracle|       {sup(flow.u - oracle):.3e}")
    print(f"|continuity - oracle| {sup(ell.u - oracle):.3e}")
    print(f"cbar = {flow.cbar:.12f}, log A(-f) = {math.log(A):.12f}")


if __name__ == "__main__":
    main()
