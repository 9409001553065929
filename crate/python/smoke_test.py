"""Smoke test for the pybicap extension.

Build and install first:

    pip install --no-build-isolation ./crates/py
"""

import math

import pybicap


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    check(pybicap.g(0.0) == 1.0 / 3.0, "g(0) = 1/3")
    check(pybicap.weight_w2(0.0) == 7.0 / 6.0, "w2(0) = 7/6")
    check(abs(pybicap.third_derivative_jump() - 1.0) < 1e-9, "third derivative jump")
    check(max(abs(pybicap.ode_residual(t)) for t in (-3.0, -0.1, 0.2, 5.0)) < 1e-12, "kernel equation")
    try:
        pybicap.ode_residual(0.0)
        check(False, "residual at zero raises")
    except pybicap.BicapError:
        check(True, "residual at zero raises")

    t, omega = pybicap.to_log_coords([0.0, 3.0, 4.0])
    check(abs(t + math.log(5.0)) < 1e-15, "log radius")
    back = pybicap.from_log_coords(t, omega)
    check(max(abs(a - b) for a, b in zip(back, [0.0, 3.0, 4.0])) < 1e-12, "log round trip")

    p = pybicap.PiProfile([1.0, 0.0, 0.0, 0.0])
    check(abs(p.sphere_l2_sq() - 4.0 * math.pi) < 1e-12, "constant profile norm")
    check(p.eval([0.0, 0.0, 2.0]) == p.eval([0.0, 0.0, 0.5]), "profile scale invariance")

    gm = pybicap.GramMatrix([[2.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 3.0, 0], [0, 0, 0, 4.0]])
    value, b = gm.cap_inf()
    check(abs(value - 1.0) < 1e-12 and abs(abs(b[1]) - 1.0) < 1e-12, "cap_inf of diagonal Gram")

    lam, _ = pybicap.four_point_min_eig(math.pi / 4, math.pi / 4)
    check(abs(lam) < 1e-12, "four-point null vector on the cone")

    v = pybicap.cusp_criterion("power", 1.0, 0.5)
    check(v["kind"] == "AnalyticConvergent", "sqrt cusp converges")
    v = pybicap.cusp_criterion("inverse_log", 1.0, 0.5)
    check(v["kind"] == "AnalyticDivergent", "inverse-log cusp diverges")

    shell = pybicap.shell_gram(1.2, 1.6, n_cells=16)
    check(shell.is_psd() and shell.trace() > 0.0, "shell Gram is positive")

    report = pybicap.verify("kernel")
    check(report["passed"], "kernel suite")
    check("kernel" in pybicap.SUITES, "suite list")


if __name__ == "__main__":
    main()
