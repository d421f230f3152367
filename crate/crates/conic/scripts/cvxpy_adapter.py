"""Reference back end: reads a qlimit-sdp/1 problem on stdin, solves it with
cvxpy, writes primal values and max-form multipliers on stdout."""
import json
import sys

import cvxpy as cp
import numpy as np
import scipy.sparse as sp


def rows(cons, n, k):
    """Stacks functionals as sparse rows over [vec(X), x]."""
    if not cons:
        return sp.csr_matrix((0, n * n + k)), np.zeros(0)
    psd = sp.vstack([sp.csr_matrix(np.asarray(c["psd"], dtype=float).reshape(1, n * n)) for c in cons])
    lin = sp.csr_matrix(np.array([c["lin"] for c in cons], dtype=float).reshape(len(cons), k))
    return sp.hstack([psd, lin]).tocsr(), np.array([c["rhs"] for c in cons], dtype=float)


def main():
    prob = json.load(sys.stdin)
    n, k = prob["psd_dim"], prob["n_lin"]
    X = cp.Variable((n, n), symmetric=True)
    x = cp.Variable(k, nonneg=True) if k > 0 else None
    # Row-major vec of a symmetric matrix equals its column-major vec.
    v = cp.hstack([cp.vec(X, order="F"), x]) if x is not None else cp.vec(X, order="F")

    A, b = rows(prob["eq_constraints"], n, k)
    G, h = rows(prob["ineq_constraints"], n, k)
    c, _ = rows([dict(prob["objective"], rhs=0.0)], n, k)
    eq = A @ v == b if A.shape[0] else None
    ineq = G @ v <= h if G.shape[0] else None
    cons = [X >> 0] + [con for con in (eq, ineq) if con is not None]
    problem = cp.Problem(cp.Maximize(c @ v), cons)
    solver = sys.argv[1] if len(sys.argv) > 1 else "CLARABEL"
    problem.solve(solver=solver)

    status = {
        cp.OPTIMAL: "optimal",
        cp.OPTIMAL_INACCURATE: "max_iters",
        cp.INFEASIBLE: "infeasible",
        cp.UNBOUNDED: "infeasible",
    }.get(problem.status, "max_iters")

    def dual(con, m):
        if con is None or con.dual_value is None:
            return [0.0] * m
        return [float(t) for t in np.asarray(con.dual_value).ravel()]

    Xv = X.value if X.value is not None else np.zeros((n, n))
    xv = x.value if (x is not None and x.value is not None) else np.zeros(k)
    json.dump(
        {
            "status": status,
            "iterations": int(problem.solver_stats.num_iters or 0),
            "x_psd": Xv.tolist(),
            "x_lin": [float(t) for t in xv],
            "dual_eq": dual(eq, A.shape[0]),
            "dual_ineq": dual(ineq, G.shape[0]),
        },
        sys.stdout,
    )


if __name__ == "__main__":
    main()
