"""MAP estimation of absolute submap transforms from relative measurements.

Variables are absolute projective transforms (one per submap), factors are
relative measurements between pairs plus gauge-fixing priors. The cost is

    sum_f || Log(H_i^-1 H_j M_f^-1) ||^2_Omega

minimized by Levenberg-Marquardt with right-multiplicative updates
H <- H Exp(delta). Because the cost is invariant to a common left factor on
all variables, at least one prior is required; the first submap is normally
anchored at the identity with a strong prior.

The solver core operates on raw 4x4 matrices through a MatrixGroup, so the
same skeleton optimizes either the 15-DOF projective group or the 7-DOF
similarity group used by the baseline mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DisconnectedGraph, LogDomainError, SingularNormalEquations
from .lie_groups import (
    Homography,
    SIM3_GROUP,
    SL4_GROUP,
    Sim3Transform,
)

VariableId = int
GraphValues = dict[VariableId, Homography]


def _check_information(info: np.ndarray, dim: int) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    if info.shape != (dim, dim):
        raise ValueError(f"information matrix must be {dim}x{dim}, got {info.shape}")
    if np.linalg.norm(info - info.T, "fro") > 1e-12 * max(1.0, np.linalg.norm(info)):
        raise ValueError("information matrix is not symmetric within 1e-12")
    return info


@dataclass(frozen=True)
class BetweenFactor:
    """Relative measurement: `measured` maps submap-j coordinates into i's."""

    i: VariableId
    j: VariableId
    measured: Homography
    information: np.ndarray

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("between factor endpoints must differ")
        object.__setattr__(
            self, "information", _check_information(self.information, 15)
        )


@dataclass(frozen=True)
class PriorFactor:
    """Gauge anchor pulling one variable toward a fixed transform."""

    i: VariableId
    anchor: Homography
    information: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "information", _check_information(self.information, 15)
        )


def identity_information(scale: float = 1.0) -> np.ndarray:
    return scale * np.eye(15)


@dataclass
class FactorGraph:
    between: list[BetweenFactor] = field(default_factory=list)
    priors: list[PriorFactor] = field(default_factory=list)

    def add_between(self, i, j, measured, information=None) -> BetweenFactor:
        f = BetweenFactor(
            i, j, measured,
            identity_information() if information is None else information,
        )
        self.between.append(f)
        return f

    def add_prior(self, i, anchor, information=None) -> PriorFactor:
        f = PriorFactor(
            i, anchor,
            identity_information(1e6) if information is None else information,
        )
        self.priors.append(f)
        return f

    def variable_ids(self) -> list[VariableId]:
        ids = {f.i for f in self.between} | {f.j for f in self.between}
        ids |= {f.i for f in self.priors}
        return sorted(ids)

    def check_connected(self, root: VariableId) -> None:
        """Raise DisconnectedGraph unless every variable reaches `root`."""
        ids = set(self.variable_ids())
        if root not in ids:
            raise DisconnectedGraph(f"root variable {root} has no factors")
        reached = {root}
        frontier = [root]
        adjacency: dict[int, list[int]] = {}
        for f in self.between:
            adjacency.setdefault(f.i, []).append(f.j)
            adjacency.setdefault(f.j, []).append(f.i)
        while frontier:
            node = frontier.pop()
            for nxt in adjacency.get(node, ()):
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        missing = ids - reached
        if missing:
            raise DisconnectedGraph(f"variables {sorted(missing)} unreachable from {root}")


# ---------------------------------------------------------------------------
# Residuals and Jacobians (generic over the matrix group).


def _canonical_element(group, d: np.ndarray) -> np.ndarray:
    # The projective group is a double cover: -D is the same point map and
    # still has unit determinant (even dimension), so chained sign choices
    # from independent estimates can land a consistent residual element on
    # the -I sheet. Lift to the near-identity sheet before taking the log.
    if group.double_cover and np.trace(d) < 0.0:
        return -d
    return d


def _between_residual(group, m_i, m_j, measured_inv) -> np.ndarray:
    return group.log(
        _canonical_element(group, np.linalg.inv(m_i) @ m_j @ measured_inv)
    )


def _between_linearize(group, m_i, m_j, measured, measured_inv):
    """Residual and its exact tangent Jacobians under H <- H Exp(delta).

    A right perturbation of the i-side enters the residual group element on
    the left, one on the j-side enters on the right transported by the
    measurement, so with e the current residual:

        J_i = -Jl^-1(e),   J_j = Jr^-1(e) Ad_measured.

    The inverse-left/right-Jacobian factors make the linearization agree
    with finite differences at any residual, not just near zero.
    """
    err = _between_residual(group, m_i, m_j, measured_inv)
    j_i = -group.inv_left_jacobian(err)
    j_j = group.inv_right_jacobian(err) @ group.adjoint(measured)
    return j_i, j_j, err


def _prior_residual(group, m_i, anchor_inv) -> np.ndarray:
    return group.log(_canonical_element(group, anchor_inv @ m_i))


def _prior_linearize(group, m_i, anchor_inv):
    err = _prior_residual(group, m_i, anchor_inv)
    return group.inv_right_jacobian(err), err


def residual(f: BetweenFactor, values: GraphValues) -> np.ndarray:
    """Log(H_i^-1 H_j measured^-1) as a 15-vector.

    Raises LogDomainError (annotated with the factor endpoints) when the
    residual element has no principal logarithm, which signals a wildly
    inconsistent measurement.
    """
    try:
        return _between_residual(
            SL4_GROUP,
            values[f.i].m,
            values[f.j].m,
            np.linalg.inv(f.measured.m),
        )
    except LogDomainError as exc:
        raise LogDomainError(f"factor ({f.i}, {f.j}): {exc}") from exc


def linearize(f: BetweenFactor, values: GraphValues):
    """(J_i, J_j, e) for the residual under right-multiplicative updates."""
    try:
        return _between_linearize(
            SL4_GROUP,
            values[f.i].m,
            values[f.j].m,
            f.measured.m,
            np.linalg.inv(f.measured.m),
        )
    except LogDomainError as exc:
        raise LogDomainError(f"factor ({f.i}, {f.j}): {exc}") from exc


def total_cost(graph: FactorGraph, values: GraphValues) -> float:
    """Sum of e^T Omega e over between and prior factors."""
    raw = {k: v.m for k, v in values.items()}
    return _total_cost_matrices(SL4_GROUP, graph, raw)


def _total_cost_matrices(group, graph, raw_values) -> float:
    cost = 0.0
    for f in graph.between:
        e = _between_residual(
            group, raw_values[f.i], raw_values[f.j], np.linalg.inv(_measure_matrix(f))
        )
        cost += float(e @ f.information @ e)
    for f in graph.priors:
        e = _prior_residual(group, raw_values[f.i], np.linalg.inv(_anchor_matrix(f)))
        cost += float(e @ f.information @ e)
    return cost


def _measure_matrix(f) -> np.ndarray:
    return f.measured.m if isinstance(f.measured, Homography) else f.measured


def _anchor_matrix(f) -> np.ndarray:
    return f.anchor.m if isinstance(f.anchor, Homography) else f.anchor


@dataclass(frozen=True)
class LmConfig:
    max_iters: int = 100
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-16


@dataclass
class OptimizationReport:
    iterations: int
    initial_cost: float
    final_cost: float
    accepted: int
    rejected: int
    history: list
    converged: bool
    status: str


def optimize_lm(
    graph: FactorGraph,
    init: GraphValues,
    config: LmConfig | None = None,
) -> tuple[GraphValues, OptimizationReport]:
    """Levenberg-Marquardt on the projective manifold.

    Builds dense normal equations from the linearized factors, damps the
    diagonal multiplicatively, and applies H_k <- H_k Exp(delta_k) whenever
    the total cost decreases. Stops on relative cost change below rel_tol,
    absolute cost below abs_tol, or max_iters. Variables are renormalized to
    unit determinant every 10 accepted steps to cap drift.

    Raises:
        SingularNormalEquations: no prior factor (free gauge) or a singular
            damped system.
        LogDomainError: some residual left the principal-log domain.
    """
    raw_init = {k: v.m for k, v in init.items()}
    raw_out, report = _optimize_matrices(SL4_GROUP, graph, raw_init, config)
    values = {k: Homography.from_matrix(m) for k, m in raw_out.items()}
    return values, report


def _optimize_matrices(group, graph, raw_init, config):
    config = config or LmConfig()
    if not graph.priors:
        raise SingularNormalEquations(
            "graph has no prior factor; the gauge is under-constrained"
        )
    ids = graph.variable_ids()
    missing = [i for i in ids if i not in raw_init]
    if missing:
        raise ValueError(f"no initial value for variables {missing}")
    slot = {vid: k for k, vid in enumerate(ids)}
    dim = group.dim
    n = len(ids)

    betweens = [
        (f, _measure_matrix(f), np.linalg.inv(_measure_matrix(f))) for f in graph.between
    ]
    priors = [(f, np.linalg.inv(_anchor_matrix(f))) for f in graph.priors]

    def cost_of(vals):
        total = 0.0
        for f, _, m_inv in betweens:
            e = _between_residual(group, vals[f.i], vals[f.j], m_inv)
            total += float(e @ f.information @ e)
        for f, a_inv in priors:
            e = _prior_residual(group, vals[f.i], a_inv)
            total += float(e @ f.information @ e)
        return total

    values = dict(raw_init)
    cost = cost_of(values)
    initial_cost = cost
    lam = config.lambda_init
    history = []
    accepted = rejected = 0
    iterations = 0
    converged = False
    status = "max_iters"

    if cost < config.abs_tol:
        converged, status = True, "abs_tol"

    while not converged and iterations < config.max_iters:
        iterations += 1
        hess = np.zeros((n * dim, n * dim))
        grad = np.zeros(n * dim)
        for f, m_mat, m_inv in betweens:
            j_i, j_j, e = _between_linearize(
                group, values[f.i], values[f.j], m_mat, m_inv
            )
            si, sj = slot[f.i] * dim, slot[f.j] * dim
            wi = f.information @ j_i
            wj = f.information @ j_j
            hess[si:si + dim, si:si + dim] += j_i.T @ wi
            hess[sj:sj + dim, sj:sj + dim] += j_j.T @ wj
            hess[si:si + dim, sj:sj + dim] += j_i.T @ wj
            hess[sj:sj + dim, si:si + dim] += j_j.T @ wi
            grad[si:si + dim] += j_i.T @ (f.information @ e)
            grad[sj:sj + dim] += j_j.T @ (f.information @ e)
        for f, a_inv in priors:
            j, e = _prior_linearize(group, values[f.i], a_inv)
            si = slot[f.i] * dim
            hess[si:si + dim, si:si + dim] += j.T @ f.information @ j
            grad[si:si + dim] += j.T @ (f.information @ e)

        damped = hess + lam * np.diag(np.diag(hess))
        try:
            delta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(damped), -grad)
        except np.linalg.LinAlgError as exc:
            raise SingularNormalEquations(str(exc)) from exc
        except scipy.linalg.LinAlgError as exc:
            raise SingularNormalEquations(str(exc)) from exc

        trial = {
            vid: values[vid] @ group.exp(delta[slot[vid] * dim:slot[vid] * dim + dim])
            for vid in ids
        }
        trial_cost = cost_of(trial)
        if trial_cost < cost:
            rel_change = (cost - trial_cost) / max(cost, 1e-300)
            values = trial
            cost = trial_cost
            accepted += 1
            lam = max(lam / config.lambda_down, 1e-12)
            if accepted % 10 == 0:
                values = {vid: group.renormalize(m) for vid, m in values.items()}
                cost = cost_of(values)
            history.append((True, cost))
            if cost < config.abs_tol:
                converged, status = True, "abs_tol"
            elif rel_change < config.rel_tol:
                converged, status = True, "rel_tol"
        else:
            rejected += 1
            lam *= config.lambda_up
            history.append((False, trial_cost))
            if lam > 1e14:
                status = "stalled"
                break

    values = {vid: group.renormalize(m) for vid, m in values.items()}
    final_cost = cost_of(values)
    report = OptimizationReport(
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=final_cost,
        accepted=accepted,
        rejected=rejected,
        history=history,
        converged=converged,
        status=status if converged or status == "stalled" else "max_iters",
    )
    return values, report


# ---------------------------------------------------------------------------
# Dedicated similarity-group solve (baseline mode / equivalence checks).


@dataclass(frozen=True)
class Sim3BetweenFactor:
    i: VariableId
    j: VariableId
    measured: Sim3Transform
    information: np.ndarray

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("between factor endpoints must differ")
        object.__setattr__(self, "information", _check_information(self.information, 7))


@dataclass(frozen=True)
class Sim3PriorFactor:
    i: VariableId
    anchor: Sim3Transform
    information: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "information", _check_information(self.information, 7))


def optimize_sim3_graph(
    between: list[Sim3BetweenFactor],
    priors: list[Sim3PriorFactor],
    init: dict[VariableId, Sim3Transform],
    config: LmConfig | None = None,
) -> tuple[dict[VariableId, Sim3Transform], OptimizationReport]:
    """Same solver skeleton instantiated on the 7-DOF similarity group."""
    graph = FactorGraph()
    for f in between:
        graph.between.append(
            _RawBetween(f.i, f.j, f.measured.to_matrix(), f.information)
        )
    for f in priors:
        graph.priors.append(_RawPrior(f.i, f.anchor.to_matrix(), f.information))
    raw_init = {k: v.to_matrix() for k, v in init.items()}
    raw_out, report = _optimize_matrices(SIM3_GROUP, graph, raw_init, config)
    from .lie_groups import similarity_from_matrix

    out = {}
    for vid, m in raw_out.items():
        sim = similarity_from_matrix(m, tol=1e-6)
        if sim is None:
            raise LogDomainError(f"variable {vid} left the similarity manifold")
        out[vid] = sim
    return out, report


@dataclass(frozen=True)
class _RawBetween:
    i: VariableId
    j: VariableId
    measured: np.ndarray
    information: np.ndarray


@dataclass(frozen=True)
class _RawPrior:
    i: VariableId
    anchor: np.ndarray
    information: np.ndarray


def dump_graph(graph: FactorGraph, values: GraphValues | None = None) -> str:
    """Line-oriented text dump of nodes, factors, and residual norms."""
    lines = []
    for vid in graph.variable_ids():
        line = f"node {vid}"
        if values is not None and vid in values:
            entries = " ".join(f"{x:.9g}" for x in values[vid].m.ravel())
            line += f" value {entries}"
        lines.append(line)
    for f in graph.priors:
        line = f"prior {f.i} info {f.information[0, 0]:.9g}"
        if values is not None and f.i in values:
            e = _prior_residual(SL4_GROUP, values[f.i].m, np.linalg.inv(f.anchor.m))
            line += f" residual_norm {np.linalg.norm(e):.9g}"
        lines.append(line)
    for f in graph.between:
        line = f"between {f.i} {f.j}"
        if values is not None and f.i in values and f.j in values:
            e = residual(f, values)
            line += f" residual_norm {np.linalg.norm(e):.9g}"
        lines.append(line)
    return "\n".join(lines) + "\n"
