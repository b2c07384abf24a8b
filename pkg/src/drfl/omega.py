"""Per-client epigraph sets for the dualized worst-case loss.

``build_omega`` returns a :class:`ConstraintSystem` over the blocks
``lam`` (1), ``alpha`` (N), ``w`` (n) plus loss-specific auxiliaries.  A point
belongs to the set iff ``sup_xi L(w; xi) - lam * d(xi, xi_i) <= alpha_i``
holds for every sample ``i``.

Auxiliary blocks:

* hinge, box support: ``pi_plus``, ``tau_plus``, ``pi_minus``, ``tau_minus`` (N*n each)
* hinge / svr / quantile, polyhedral support: ``phi_plus``, ``phi_minus`` (N*r each)
* huber: ``mu``, ``abs`` (N each)
* smooth hinge: ``phi_plus``, ``phi_minus``, ``pi_plus``, ``pi_minus`` (N each)

Rows are tagged into groups of kind ``"epigraph"`` (one per sample and
side) and ``"dual_norm"``.  With the l1 feature metric every dual-norm
constraint is a pair of linear box rows per coordinate.
"""

from __future__ import annotations

import numpy as np

from .constraints import ConstraintSystem, Layout, NormRow, QuadraticRow, SoftplusRow, SystemBuilder
from .inner_solver import ConvexProgram, solve
from .losses import empirical_loss
from .model import SUPPORTED_PAIRS, ClientDataset, LossSpec, RobustnessSpec, SupportSpec
from .projections import dual_index, normalize_p

METRIC_INDEX = {"l1": 1.0, "l2": 2.0, "linf": np.inf}


class UnsupportedCombination(ValueError):
    pass


def _dual_norm(sb: SystemBuilder, comps, q: float, group: int, lam_coef: float = 1.0) -> None:
    """Add ``|| (expr_j)_j ||_q <= lam_coef * lam``; ``comps`` is a list of (terms, const)."""
    if q == np.inf:
        for terms, const in comps:
            sb.row(list(terms) + [("lam", 0, -lam_coef)], -const, group)
            sb.row([(b, i, -c) for b, i, c in terms] + [("lam", 0, -lam_coef)], const, group)
        return
    M = np.array([sb.vector(terms) for terms, _ in comps])
    m0 = np.array([const for _, const in comps], dtype=float)
    sb.add_nonlinear(NormRow(M, m0, sb.vector([("lam", 0, lam_coef)]), 0.0, q), group)


def _w_terms(coefs, scale=1.0):
    return [("w", j, scale * c) for j, c in enumerate(coefs)]


def _metric_dual(metric_norm: str) -> float:
    if metric_norm not in METRIC_INDEX:
        raise ValueError(f"unknown metric norm {metric_norm!r}")
    return dual_index(normalize_p(METRIC_INDEX[metric_norm]))


def _check_pair(loss: LossSpec, support: SupportSpec) -> None:
    allowed = SUPPORTED_PAIRS.get(loss.family, set())
    if support.kind not in allowed:
        raise UnsupportedCombination(
            f"no exact finite reformulation for {loss.family} loss with {support.kind} support"
        )


def build_omega(
    loss: LossSpec,
    support: SupportSpec,
    kappa: float,
    metric_norm: str,
    client: ClientDataset,
    empirical: bool = False,
) -> ConstraintSystem:
    """Constraint system of the client's epigraph set.

    ``empirical=True`` builds the zero-radius variant: plain epigraph rows
    ``L(w; x_i, y_i) <= alpha_i`` with ``lam`` pinned to 0.
    """
    _check_pair(loss, support)
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    X, y = client.X, client.y
    N, n = X.shape
    q = _metric_dual(metric_norm)
    build = {
        "hinge": _hinge,
        "svr": _regression_piecewise,
        "quantile": _regression_piecewise,
        "huber": _huber,
        "smooth_hinge": _smooth_hinge,
        "logistic": _logistic,
    }[loss.family]
    return build(loss, support, kappa, q, X, y, N, n, empirical)


def _base_layout(N, n):
    return Layout([("lam", 1), ("alpha", N), ("w", n)])


def _finish(sb: SystemBuilder, empirical: bool, alpha_nonneg: bool) -> ConstraintSystem:
    sb.bound("lam", 0.0, 0.0 if empirical else np.inf)
    if alpha_nonneg:
        sb.bound("alpha", 0.0)
    return sb.build()


# ----- hinge -----------------------------------------------------------------


def _hinge(loss, support, kappa, q, X, y, N, n, empirical):
    layout = _base_layout(N, n)
    if empirical:
        sb = SystemBuilder(layout)
        for i in range(N):
            g = sb.group("epigraph", f"sample {i}")
            sb.row(_w_terms(X[i], -y[i]) + [("alpha", i, -1.0)], -1.0, g)
        return _finish(sb, True, True)
    if support.kind in ("box_symmetric", "box_unit"):
        return _hinge_box(support.kind, kappa, q, X, y, N, n, layout)
    C, _, d = support.polyhedron(n)
    r = C.shape[0]
    if r:
        layout.add("phi_plus", N * r)
        layout.add("phi_minus", N * r)
    sb = SystemBuilder(layout)
    for i in range(N):
        slack = d - C @ X[i]
        for side, sgn in (("plus", 1.0), ("minus", -1.0)):
            g = sb.group("epigraph", f"sample {i} {side}")
            terms = _w_terms(X[i], -sgn * y[i]) + [("alpha", i, -1.0)]
            if r:
                terms += [(f"phi_{side}", i * r + k, slack[k]) for k in range(r)]
            if side == "minus":
                terms.append(("lam", 0, -kappa))
            sb.row(terms, -1.0, g)
        if r:
            for side, sgn in (("plus", 1.0), ("minus", -1.0)):
                g = sb.group("dual_norm", f"sample {i} {side}")
                comps = []
                for j in range(n):
                    terms = [(f"phi_{side}", i * r + k, C[k, j]) for k in range(r)]
                    comps.append((terms + [("w", j, sgn * y[i])], 0.0))
                _dual_norm(sb, comps, q, g)
    if not r:
        g = sb.group("dual_norm", "model")
        _dual_norm(sb, [([("w", j, 1.0)], 0.0) for j in range(n)], q, g)
    if r:
        sb.bound("phi_plus", 0.0)
        sb.bound("phi_minus", 0.0)
    return _finish(sb, False, True)


def _hinge_box(kind, kappa, q, X, y, N, n, layout):
    # Box support split into upper (pi) and lower (tau) face multipliers.
    for name in ("pi_plus", "tau_plus", "pi_minus", "tau_minus"):
        layout.add(name, N * n)
    sb = SystemBuilder(layout)
    for i in range(N):
        x = X[i]
        upper = 1.0 - x
        lower = 1.0 + x if kind == "box_symmetric" else x
        for side, sgn in (("plus", 1.0), ("minus", -1.0)):
            g = sb.group("epigraph", f"sample {i} {side}")
            terms = _w_terms(x, -sgn * y[i]) + [("alpha", i, -1.0)]
            terms += [(f"pi_{side}", i * n + j, upper[j]) for j in range(n)]
            terms += [(f"tau_{side}", i * n + j, lower[j]) for j in range(n)]
            if side == "minus":
                terms.append(("lam", 0, -kappa))
            sb.row(terms, -1.0, g)
        for side, sgn in (("plus", 1.0), ("minus", -1.0)):
            g = sb.group("dual_norm", f"sample {i} {side}")
            comps = [
                ([(f"pi_{side}", i * n + j, 1.0), (f"tau_{side}", i * n + j, -1.0), ("w", j, sgn * y[i])], 0.0)
                for j in range(n)
            ]
            _dual_norm(sb, comps, q, g)
    for name in ("pi_plus", "tau_plus", "pi_minus", "tau_minus"):
        sb.bound(name, 0.0)
    return _finish(sb, False, True)


# ----- epsilon-insensitive and pinball --------------------------------------


def _regression_piecewise(loss, support, kappa, q, X, y, N, n, empirical):
    # loss = max(a_plus * (y - <w,x>) - off, a_minus * (<w,x> - y) - off[, 0])
    if loss.family == "svr":
        a_plus, a_minus, off = 1.0, 1.0, float(loss.epsilon)
    else:
        a_plus, a_minus, off = float(loss.epsilon), 1.0 - float(loss.epsilon), 0.0
    layout = _base_layout(N, n)
    C, c2, d = support.polyhedron(n, regression=True)
    r = 0 if empirical else C.shape[0]
    if r:
        layout.add("phi_plus", N * r)
        layout.add("phi_minus", N * r)
    sb = SystemBuilder(layout)
    for i in range(N):
        slack = d - C @ X[i] - c2 * y[i] if r else None
        for side, a, sgn in (("plus", a_plus, -1.0), ("minus", a_minus, 1.0)):
            # side plus: a (y - w'x) - off; side minus: a (w'x - y) - off
            g = sb.group("epigraph", f"sample {i} {side}")
            terms = _w_terms(X[i], sgn * a) + [("alpha", i, -1.0)]
            if r:
                terms += [(f"phi_{side}", i * r + k, slack[k]) for k in range(r)]
            sb.row(terms, off + sgn * a * y[i], g)
    if not empirical:
        if r:
            for i in range(N):
                for side, a, sgn in (("plus", a_plus, 1.0), ("minus", a_minus, -1.0)):
                    g = sb.group("dual_norm", f"sample {i} {side}")
                    comps = []
                    for j in range(n):
                        terms = [(f"phi_{side}", i * r + k, C[k, j]) for k in range(r)]
                        comps.append((terms + [("w", j, sgn * a)], 0.0))
                    _dual_norm(sb, comps, q, g)
                    # label coordinate: |c2'phi - sgn * a| <= kappa * lam
                    yterms = [(f"phi_{side}", i * r + k, c2[k]) for k in range(r)]
                    _dual_norm(sb, [(yterms, -sgn * a)], np.inf, g, lam_coef=kappa)
        else:
            a_max = max(a_plus, a_minus)
            g = sb.group("dual_norm", "model")
            _dual_norm(sb, [([("w", j, a_max)], 0.0) for j in range(n)], q, g)
            sb.row([("lam", 0, -kappa)], -a_max, g)
        if r:
            sb.bound("phi_plus", 0.0)
            sb.bound("phi_minus", 0.0)
    return _finish(sb, empirical, True)


# ----- huber -----------------------------------------------------------------


def _huber(loss, support, kappa, q, X, y, N, n, empirical):
    eps = float(loss.epsilon)
    layout = _base_layout(N, n)
    layout.add("mu", N)
    layout.add("abs", N)
    sb = SystemBuilder(layout)
    for i in range(N):
        g = sb.group("epigraph", f"sample {i}")
        # abs_i >= |<w,x_i> - y_i - mu_i|
        sb.row(_w_terms(X[i]) + [("mu", i, -1.0), ("abs", i, -1.0)], y[i], g)
        sb.row(_w_terms(X[i], -1.0) + [("mu", i, 1.0), ("abs", i, -1.0)], -y[i], g)
        sb.add_nonlinear(
            QuadraticRow(
                sb.vector([("mu", i, 1.0)]), 0.0, sb.vector([("abs", i, eps), ("alpha", i, -1.0)]), 0.0
            ),
            g,
        )
    if not empirical:
        g = sb.group("dual_norm", "model")
        _dual_norm(sb, [([("w", j, eps)], 0.0) for j in range(n)], q, g)
        sb.row([("lam", 0, -kappa)], -eps, g)
    return _finish(sb, empirical, False)


# ----- smooth hinge and logistic ---------------------------------------------


def _smooth_hinge(loss, support, kappa, q, X, y, N, n, empirical):
    layout = _base_layout(N, n)
    sides = (("plus", 1.0),) if empirical else (("plus", 1.0), ("minus", -1.0))
    for side, _ in sides:
        layout.add(f"phi_{side}", N)
        layout.add(f"pi_{side}", N)
    sb = SystemBuilder(layout)
    for i in range(N):
        for side, sgn in sides:
            g = sb.group("epigraph", f"sample {i} {side}")
            # 0.5 (phi - sgn * y <w,x>)^2 + pi [- kappa lam] <= alpha
            gv = sb.vector([(f"phi_{side}", i, 1.0)] + _w_terms(X[i], -sgn * y[i]))
            a_terms = [(f"pi_{side}", i, 1.0), ("alpha", i, -1.0)]
            if side == "minus":
                a_terms.append(("lam", 0, -kappa))
            sb.add_nonlinear(QuadraticRow(gv, 0.0, sb.vector(a_terms), 0.0), g)
            sb.row([(f"phi_{side}", i, -1.0), (f"pi_{side}", i, -1.0)], -1.0, g)
    for side, _ in sides:
        sb.bound(f"pi_{side}", 0.0)
    if not empirical:
        g = sb.group("dual_norm", "model")
        _dual_norm(sb, [([("w", j, 1.0)], 0.0) for j in range(n)], q, g)
    return _finish(sb, empirical, False)


def _logistic(loss, support, kappa, q, X, y, N, n, empirical):
    layout = _base_layout(N, n)
    sb = SystemBuilder(layout)
    sides = (("plus", 1.0),) if empirical else (("plus", 1.0), ("minus", -1.0))
    for i in range(N):
        for side, sgn in sides:
            g = sb.group("epigraph", f"sample {i} {side}")
            a_terms = [("alpha", i, -1.0)]
            if side == "minus":
                a_terms.append(("lam", 0, -kappa))
            sb.add_nonlinear(
                SoftplusRow(sb.vector(_w_terms(X[i], -sgn * y[i])), 0.0, sb.vector(a_terms), 0.0), g
            )
    if not empirical:
        g = sb.group("dual_norm", "model")
        _dual_norm(sb, [([("w", j, 1.0)], 0.0) for j in range(n)], q, g)
    return _finish(sb, empirical, False)


# ----- evaluation ------------------------------------------------------------


def pi_vector(cs: ConstraintSystem, rho: float) -> np.ndarray:
    """Coefficients ``g`` with ``g @ v = rho * lam + mean(alpha)``."""
    g = np.zeros(cs.n_vars)
    g[cs.layout["lam"]] = rho
    sl = cs.layout["alpha"]
    g[sl] = 1.0 / (sl.stop - sl.start)
    return g


def omega_feasible(cs: ConstraintSystem, point, tol: float = 1e-8) -> tuple[bool, float]:
    point = np.asarray(point, dtype=float)
    if point.shape != (cs.n_vars,):
        raise ValueError(f"point has shape {point.shape}, layout expects ({cs.n_vars},)")
    worst = cs.max_violation(point)
    return worst <= tol, worst


def fix_block(cs: ConstraintSystem, name: str, value) -> ConstraintSystem:
    """Copy of ``cs`` with block ``name`` pinned to ``value`` through its bounds."""
    sl = cs.layout[name]
    lb, ub = cs.lb.copy(), cs.ub.copy()
    lb[sl] = value
    ub[sl] = value
    return ConstraintSystem(
        cs.layout, cs.A, cs.b, cs.row_group, cs.groups, lb, ub, cs.Aeq, cs.beq, cs.nonlinear, cs.nonlinear_group
    )


def worst_case_client_loss(
    w,
    client: ClientDataset,
    robustness: RobustnessSpec,
    loss: LossSpec,
    support: SupportSpec,
    tol: float = 1e-9,
) -> float:
    """Worst-case expected loss of ``client`` over its transport ball at model ``w``."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != client.n_features:
        raise ValueError(f"model has {w.size} weights, features have {client.n_features}")
    rho = robustness.rho_for(client.client_id)
    if rho == 0:
        return empirical_loss(loss, w, client)
    cs = build_omega(loss, support, robustness.kappa, robustness.metric_norm, client)
    cs = fix_block(cs, "w", w)
    sol = solve(ConvexProgram(cs, pi_vector(cs, rho)), tol=tol)
    return float(sol.objective)
