"""Reference optima for the shared-slack SVM used by test_training.cpp.

Run offline with cvxpy installed; the printed values are frozen into the C++ test.
"""
import math

import cvxpy as cp
import numpy as np

DIM = 5


def problem():
    rows = []
    for i in range(14):
        x = [math.sin(1.3 * i + 0.7 * j + 0.1) for j in range(DIM)]
        if i < 6:
            rows.append(([v + 0.5 for v in x], 1.0, 1.0, i))
        else:
            delta = (i % 4) / 4.0
            rows.append(([v - 0.3 for v in x], -1.0, 1.0 - 0.5 * delta, 6 + (i - 6) // 3))
    return rows


def solve(C):
    rows = problem()
    groups = sorted({g for *_, g in rows})
    w = cp.Variable(DIM)
    xi = cp.Variable(len(groups), nonneg=True)
    cons = [s * (np.array(x) @ w) >= m - xi[groups.index(g)] for x, s, m, g in rows]
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(w) + C * cp.sum(xi)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return prob.value, w.value


if __name__ == "__main__":
    for C in (0.05, 0.5, 5.0):
        val, w = solve(C)
        print(f"C={C}: objective {val:.12g} w {', '.join(f'{v:.12g}' for v in w)}")
