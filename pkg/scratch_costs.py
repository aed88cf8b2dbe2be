import numpy as np
from scipy.optimize import minimize as scipy_minimize

from swarmplan.bspline import BSplineTrajectory
from swarmplan import costs as C
from swarmplan.gridmap import PvPair
from swarmplan.lbfgs import minimize

rng = np.random.default_rng(3)


def fd_grad(fun, q, h=1e-6):
    g = np.zeros_like(q)
    flat = q.ravel()
    for k in range(flat.size):
        qp, qm = flat.copy(), flat.copy()
        qp[k] += h
        qm[k] -= h
        g.ravel()[k] = (fun(qp.reshape(q.shape)) - fun(qm.reshape(q.shape))) / (2 * h)
    return g


def check(name, fun, q, tol=2e-5):
    _, g = fun(q)
    g_fd = fd_grad(lambda qq: fun(qq)[0], q)
    scale = max(np.abs(g_fd).max(), 1e-9)
    err = np.abs(g - g_fd).max() / scale
    print(f"{name}: rel grad err {err:.2e}")
    assert err < tol, (name, err)


q = rng.normal(size=(10, 3)) * 2

check("smoothness", C.smoothness_cost, q)

# collinear -> 0
line = np.outer(np.arange(8), np.array([1.0, -0.5, 0.25]))
cost, grad = C.smoothness_cost(line)
assert cost == 0 and np.all(grad == 0)
# quadratic homogeneity
c1, _ = C.smoothness_cost(q)
centered = (q - q.mean(axis=0)) * 2 + q.mean(axis=0)
c2, _ = C.smoothness_cost(centered)
assert abs(c2 - 4 * c1) < 1e-9 * max(1, c1), (c1, c2)

pairs = [
    PvPair(rng.normal(size=3), rng.normal(size=3), i, 0) for i in (2, 3, 4, 4)
]
check("collision", lambda qq: C.collision_cost(qq, pairs, clearance=0.6), q)

check("feasibility", lambda qq: C.feasibility_cost(qq, 0.4, 1.2, 4.0), q)
v_ok = np.outer(np.arange(6), [0.95 * 1.2 * 0.4 * (1 - 0.051), 0, 0])
cost, _ = C.feasibility_cost(v_ok, 0.4, 1.2, 99.0)
print("feas near boundary:", cost)

check("terminal", lambda qq: C.terminal_cost(qq, np.array([1.0, 2.0, 3.0])), q)

# swarm: parallel separated > C+eps -> 0
own = BSplineTrajectory(np.outer(np.arange(8), [1.0, 0, 0]), 0.5)
far = BSplineTrajectory(np.outer(np.arange(8), [1.0, 0, 0]) + [0, 5, 0], 0.5)
cs = C.SwarmConstraintSet((C.RemoteTrajectory(1, far),), clearance=0.8, ratio=4.0)
cost, grad = C.swarm_cost(own, cs)
assert cost == 0 and np.all(grad == 0)

# vertical offset: penalized iff z/sqrt(c) < C+eps
for z, expect in ((1.6, True), (3.0, False)):  # z/2 vs 0.85
    above = BSplineTrajectory(own.control_points + [0, 0, z], 0.5)
    cs2 = C.SwarmConstraintSet((C.RemoteTrajectory(1, above),), 0.8, 4.0)
    cost, _ = C.swarm_cost(own, cs2)
    assert (cost > 0) == expect, (z, cost)
    d = C.min_swarm_separation(own, above.trajectory if hasattr(above, "trajectory") else above, 4.0)
    assert abs(d - z / 2) < 1e-9

# swarm gradient vs FD on random overlapping splines
rem = BSplineTrajectory(rng.normal(size=(9, 3)) * 1.5, 0.45, start_time=0.3)
cs3 = C.SwarmConstraintSet((C.RemoteTrajectory(2, rem),), 0.8, 4.0)


def swarm_of(qq):
    t = BSplineTrajectory(qq, 0.5)
    return C.swarm_cost(t, cs3)


check("swarm", swarm_of, rng.normal(size=(10, 3)) * 1.0, tol=5e-5)

# barrier C1 junction
bp = C.BarrierParams(scale=1.0, exponent=3, margin=0.05, threshold=1.0)
for v in (0.94999, 0.95, 0.950001, 1.2):
    c_, d_ = C.soft_barrier(v, bp)
assert C.soft_barrier(0.95, bp) == (0.0, 0.0)
assert abs(C.soft_barrier(2.95, bp)[0] - 8.0) < 1e-12

# lbfgs vs scipy on a quartic-ish composite
A = rng.normal(size=(12, 12))
H = A @ A.T + 0.5 * np.eye(12)
b = rng.normal(size=12)


def fobj(x):
    r = H @ x - b
    quart = np.sum(np.maximum(x - 0.3, 0) ** 3)
    g = H @ r * 2 if False else None
    val = 0.5 * r @ r + quart
    grad = H.T @ r + 3 * np.maximum(x - 0.3, 0) ** 2
    return val, grad


res = minimize(fobj, np.zeros(12), max_iterations=200, grad_tol=1e-8)
ref = scipy_minimize(fobj, np.zeros(12), jac=True, method="L-BFGS-B")
print("lbfgs:", res.fun, res.status, res.iterations, "| scipy:", ref.fun)
assert res.fun <= ref.fun + 1e-6
print("ALL COSTS/LBFGS SMOKE OK")
