"""Monotonicity checks, localized-potential searches, inclusion detection,
and the partition-constant reconstruction sweep.

Detection follows the linearized-test pattern: the only forward solves use
the reference potential. A candidate region passes when the observed DtN
shift is sandwiched (up to a finite eigenvalue defect) by multiples of the
candidate's testing operator; the multiplier alpha is scanned over a
geometric ladder so verdicts are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegeneratePencil, ResonantPotential
from .fracops import (
    NonlocalOperator,
    Partition,
    RegionMask,
    bilinear_form,
    mask_from_flags,
    potential_values,
)
from .forward import (
    DtnMap,
    Potential,
    assemble_dtn,
    dtn_derivative,
    dtn_difference,
    neumann_trace,
    resonance_data,
    solution_operator,
    solve_dirichlet,
)
from .loewner import EIG_TOL, OrderVerdict, leq_d, neg_eig_count

PENCIL_EPS_SCALE = 1e-12
MAX_SWEEPS = 50


# ---------------------------------------------------------------------------
# Monotonicity identity


@dataclass
class MonotonicityGap:
    """Exact algebraic balance between the DtN shift and the interior energy.

    lhs  = g' (Lambda(q1) - Lambda(q2)) g
    rhs  = sum m (q1 - q2) u1^2
    identity_residual = |lhs - rhs - B_{q2}(u2 - u1, u2 - u1)|
    """

    lhs: float
    rhs: float
    identity_residual: float


def monotonicity_gap(op: NonlocalOperator, q1, q2, g: np.ndarray) -> MonotonicityGap:
    u1 = solve_dirichlet(op, q1, g)
    u2 = solve_dirichlet(op, q2, g)
    lhs = float(g @ (neumann_trace(op, u1) - neumann_trace(op, u2)))
    q1v = potential_values(q1)
    q2v = potential_values(q2)
    rhs = float(op.m * np.sum((q1v - q2v) * u1[op.I] ** 2))
    quad = bilinear_form(op, q2v, u2 - u1, u2 - u1)
    return MonotonicityGap(lhs=lhs, rhs=rhs, identity_residual=abs(lhs - rhs - quad))


# ---------------------------------------------------------------------------
# Testing operators and detection


def testing_operator(op: NonlocalOperator, q0, mask: RegionMask) -> np.ndarray:
    """Gram matrix of reference solutions restricted to the masked region."""
    if mask.count == 0:
        raise ValueError("testing operator needs a region of positive measure")
    direction = np.where(mask.flags, 1.0, 0.0)
    return dtn_derivative(op, q0, direction)


@dataclass
class DetectionConfig:
    """Ladder, dictionary and threshold policy for the monotonicity tests."""

    dictionary: list
    alpha0: float = 1e-3
    alpha_count: int = 25
    tol: float = EIG_TOL
    d_policy: str = "resonance-counts"
    d_lower: int | None = None
    d_upper: int | None = None

    def __post_init__(self):
        if not self.dictionary:
            raise ValueError("detection dictionary must be nonempty")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.alpha_count < 1:
            raise ValueError("alpha_count must be at least 1")

    @property
    def alphas(self) -> np.ndarray:
        return self.alpha0 * 2.0 ** np.arange(self.alpha_count)


@dataclass
class CandidateRecord:
    candidate_id: str
    passed: bool
    alpha_pass: float | None
    neg_count_lower: int
    neg_count_upper: int


@dataclass
class DetectionResult:
    mode: str
    records: list
    aggregate: RegionMask
    d_used: tuple


def test_indefinite(
    delta: np.ndarray,
    t_c: np.ndarray,
    config: DetectionConfig,
    d_lower: int,
    d_upper: int,
) -> tuple[bool, float | None, list]:
    """Scan alpha upward for -alpha T_C <=_{d_lower} delta <=_{d_upper} alpha T_C.

    Both sides weaken as alpha grows (T_C is PSD), so the first passing
    alpha is the smallest one in the ladder.
    """
    records = []
    for alpha in config.alphas:
        lo = neg_eig_count(delta + alpha * t_c, tol=config.tol)
        hi = neg_eig_count(alpha * t_c - delta, tol=config.tol)
        ok = lo <= d_lower and hi <= d_upper
        records.append((float(alpha), lo, hi, ok))
        if ok:
            return True, float(alpha), records
    return False, None, records


def test_definite_ball(
    delta: np.ndarray,
    t_b: np.ndarray,
    direction: str,
    config: DetectionConfig,
    d_threshold: int,
) -> tuple[bool, float | None, list]:
    """Scan alpha downward for the one-sided ball test.

    direction "up"   tests delta >=_d alpha T_B   (q above the reference)
    direction "down" tests delta <=_d -alpha T_B  (q below the reference)

    The test weakens as alpha decreases, so the first passing alpha while
    scanning from the top of the ladder is the largest passing one.
    """
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    records = []
    for alpha in config.alphas[::-1]:
        if direction == "up":
            count = neg_eig_count(delta - alpha * t_b, tol=config.tol)
        else:
            count = neg_eig_count(-delta - alpha * t_b, tol=config.tol)
        ok = count <= d_threshold
        records.append((float(alpha), count, ok))
        if ok:
            return True, float(alpha), records
    return False, None, records


def _projected_difference(op, q0, dtn_q: DtnMap):
    dtn_q0 = assemble_dtn(op, q0)
    if dtn_q0.resonance.dim_nq > 0:
        raise ResonantPotential("reference potential must be non-resonant")
    delta, basis = dtn_difference(dtn_q, dtn_q0)
    return delta, basis, dtn_q0


def detect_indefinite(
    op: NonlocalOperator,
    q0,
    dtn_q: DtnMap,
    config: DetectionConfig,
) -> DetectionResult:
    """Intersection of all dictionary sets passing the two-sided test."""
    delta, basis, dtn_q0 = _projected_difference(op, q0, dtn_q)
    d_lower = config.d_lower
    d_upper = config.d_upper
    if d_lower is None:
        d_lower = dtn_q0.resonance.d_q + dtn_q.resonance.d_q
    if d_upper is None:
        d_upper = dtn_q.resonance.d_q

    grid = op.grid
    agg = np.ones(grid.n_I, dtype=bool)
    records = []
    for mask in config.dictionary:
        t_c = basis.T @ testing_operator(op, q0, mask) @ basis
        passed, alpha, trail = test_indefinite(delta, t_c, config, d_lower, d_upper)
        _, lo, hi, _ = trail[-1]
        records.append(CandidateRecord(mask.label or "candidate", passed, alpha, lo, hi))
        if passed:
            agg &= mask.flags
    return DetectionResult(
        mode="indefinite",
        records=records,
        aggregate=mask_from_flags(grid, agg, label="aggregate"),
        d_used=(d_lower, d_upper),
    )


def detect_definite(
    op: NonlocalOperator,
    q0,
    dtn_q: DtnMap,
    direction: str,
    config: DetectionConfig,
) -> DetectionResult:
    """Union of all dictionary balls passing the one-sided test."""
    delta, basis, dtn_q0 = _projected_difference(op, q0, dtn_q)
    if direction == "up":
        d_thr = config.d_upper
        if d_thr is None:
            d_thr = dtn_q.resonance.d_q + dtn_q0.resonance.d_q
    else:
        d_thr = config.d_lower
        if d_thr is None:
            d_thr = dtn_q.resonance.d_q

    grid = op.grid
    agg = np.zeros(grid.n_I, dtype=bool)
    records = []
    for mask in config.dictionary:
        t_b = basis.T @ testing_operator(op, q0, mask) @ basis
        passed, alpha, trail = test_definite_ball(delta, t_b, direction, config, d_thr)
        _, count, _ = trail[-1]
        if direction == "up":
            records.append(CandidateRecord(mask.label or "candidate", passed, alpha, 0, count))
        else:
            records.append(CandidateRecord(mask.label or "candidate", passed, alpha, count, 0))
        if passed:
            agg |= mask.flags
    mode = "definite-up" if direction == "up" else "definite-down"
    return DetectionResult(
        mode=mode,
        records=records,
        aggregate=mask_from_flags(grid, agg, label="aggregate"),
        d_used=(d_thr,),
    )


# ---------------------------------------------------------------------------
# Dictionaries


def closed_set_dictionary(partition: Partition, arity: int = 1, cap: int = 4096) -> list:
    """Cell unions up to the given arity plus their complements.

    The complements are what localize an inclusion: the complement of a
    cell passes exactly when the perturbation avoids that cell.
    """
    from itertools import combinations

    grid = partition.grid
    out = []
    for k in range(1, arity + 1):
        for combo in combinations(range(partition.n_cells), k):
            if len(out) + 2 > cap:
                return out
            flags = np.zeros(grid.n_I, dtype=bool)
            for c in combo:
                flags |= partition.masks[c].flags
            tag = "+".join(str(c) for c in combo)
            out.append(mask_from_flags(grid, flags, label=f"cells:{tag}"))
            comp = ~flags
            if np.any(comp):
                out.append(mask_from_flags(grid, comp, label=f"comp:{tag}"))
    return out


def ball_dictionary(grid, partition: Partition, radii_factors=(0.5, 1.0, 1.5)) -> list:
    """Balls centered at partition cell centers, radii scaled by cell width."""
    widths = (grid.omega_box[:, 1] - grid.omega_box[:, 0])
    cells_along = [len(np.unique(np.round(partition.cell_centers()[:, ax], 12))) for ax in range(grid.dim)]
    cell_w = float(np.min(widths / np.asarray(cells_along)))
    out = []
    for ci, center in enumerate(partition.cell_centers()):
        for rf in radii_factors:
            radius = rf * cell_w
            try:
                mask = mask_from_flags(
                    grid,
                    np.sqrt(np.sum((grid.interior_nodes - center) ** 2, axis=1)) <= radius + 1e-9 * grid.h,
                    label=f"ball:{ci}:r{rf:g}",
                )
            except ValueError:
                continue
            if mask.count:
                out.append(mask)
    return out


# ---------------------------------------------------------------------------
# Localized potentials


@dataclass
class LocPotResult:
    """Optimizer of the masked-energy Rayleigh quotient.

    ratio is recomputed from the solved field; for the simultaneous search
    ratio1/ratio2 report each field's own in/out energy split.
    """

    ratio: float
    g: np.ndarray
    u: np.ndarray
    v_basis: np.ndarray
    u2: np.ndarray | None = None
    ratio1: float | None = None
    ratio2: float | None = None


def _feasible_basis(op, constraints: list) -> np.ndarray:
    """Orthonormal basis of the exterior vectors orthogonal to all constraint rows."""
    n_e = op.grid.n_E
    rows = [np.atleast_2d(np.asarray(c, dtype=float)) for c in constraints if np.size(c)]
    if not rows:
        return np.eye(n_e)
    a = np.vstack(rows)
    if a.shape[1] != n_e:
        raise ValueError("constraint vectors must live on the exterior nodes")
    u, sing, vt = np.linalg.svd(a, full_matrices=True)
    smax = sing.max() if sing.size else 0.0
    rank = int(np.count_nonzero(sing > 1e-12 * max(smax, 1.0)))
    basis = vt[rank:].T
    if basis.shape[1] == 0:
        raise ValueError("constraints leave no feasible exterior direction")
    return basis


def _mask_energies(op, u_int: np.ndarray, flags: np.ndarray) -> tuple[float, float]:
    num = op.m * float(np.sum(u_int[flags] ** 2))
    den = op.m * float(np.sum(u_int[~flags] ** 2))
    return num, den


def localized_potential(
    op: NonlocalOperator,
    q,
    mask: RegionMask,
    v_constraints=None,
    eps_scale: float = PENCIL_EPS_SCALE,
) -> LocPotResult:
    """Maximize in-region solution energy against out-of-region energy.

    The optimizer solves the generalized symmetric eigenproblem for the
    pencil (G_M, G_out + eps I) built from the solution operator restricted
    to the feasible exterior directions (admissible data orthogonal to the
    caller constraints).
    """
    if mask.count == 0:
        raise ValueError("mask must be nonempty")
    if mask.count == op.grid.n_I:
        raise ValueError("mask must leave a nonempty exterior region inside Omega")
    res = resonance_data(op, q)
    constraints = []
    if v_constraints is not None:
        v = np.asarray(v_constraints, dtype=float)
        if v.size:
            constraints.append(v.T if v.ndim == 2 else v[None, :])
    if res.dim_nq > 0:
        constraints.append(res.kernel_basis.T @ op.L_IE)
    basis = _feasible_basis(op, constraints)

    s = solution_operator(op, q, resonance=res) @ basis
    g_m = op.m * (s[mask.flags].T @ s[mask.flags])
    g_out = op.m * (s[~mask.flags].T @ s[~mask.flags])
    tr_out = float(np.trace(g_out))
    if np.trace(g_m) <= 0 and tr_out <= 0:
        raise DegeneratePencil("both energy forms vanished on the feasible space")
    eps = eps_scale * tr_out if tr_out > 0 else eps_scale
    evals, evecs = scipy.linalg.eigh(g_m, g_out + eps * np.eye(g_out.shape[0]))
    c = evecs[:, -1]
    g = basis @ c
    g = g / np.linalg.norm(g)

    u = solve_dirichlet(op, q, g, resonance=res)
    num, den = _mask_energies(op, u[op.I], mask.flags)
    v_used = _feasible_basis_complement(constraints, op.grid.n_E)
    return LocPotResult(ratio=num / (den + eps), g=g, u=u, v_basis=v_used)


def _feasible_basis_complement(constraints: list, n_e: int) -> np.ndarray:
    """Orthonormal basis of the span of the constraint rows (the excluded V)."""
    rows = [np.atleast_2d(np.asarray(c, dtype=float)) for c in constraints if np.size(c)]
    if not rows:
        return np.zeros((n_e, 0))
    a = np.vstack(rows)
    u, sing, vt = np.linalg.svd(a, full_matrices=False)
    smax = sing.max() if sing.size else 0.0
    rank = int(np.count_nonzero(sing > 1e-12 * max(smax, 1.0)))
    return vt[:rank].T


def simultaneous_localized_potential(
    op: NonlocalOperator,
    q1,
    q2,
    mask: RegionMask,
    v_constraints=None,
    eps_scale: float = PENCIL_EPS_SCALE,
) -> LocPotResult:
    """Localize both fields at once; requires supp(q1 - q2) inside the mask."""
    if mask.count == 0:
        raise ValueError("mask must be nonempty")
    q1v = potential_values(q1)
    q2v = potential_values(q2)
    diff_support = np.abs(q1v - q2v) > 0
    if np.any(diff_support & ~mask.flags):
        raise ValueError("supp(q1 - q2) must be contained in the mask")
    res1 = resonance_data(op, q1v)
    res2 = resonance_data(op, q2v)
    constraints = []
    if v_constraints is not None:
        v = np.asarray(v_constraints, dtype=float)
        if v.size:
            constraints.append(v.T if v.ndim == 2 else v[None, :])
    for res in (res1, res2):
        if res.dim_nq > 0:
            constraints.append(res.kernel_basis.T @ op.L_IE)
    basis = _feasible_basis(op, constraints)

    s1 = solution_operator(op, q1v, resonance=res1) @ basis
    s2 = solution_operator(op, q2v, resonance=res2) @ basis
    g_num = op.m * (s1[mask.flags].T @ s1[mask.flags])
    g_den = op.m * (s1[~mask.flags].T @ s1[~mask.flags] + s2[~mask.flags].T @ s2[~mask.flags])
    tr_den = float(np.trace(g_den))
    if np.trace(g_num) <= 0 and tr_den <= 0:
        raise DegeneratePencil("both energy forms vanished on the feasible space")
    eps = eps_scale * tr_den if tr_den > 0 else eps_scale
    evals, evecs = scipy.linalg.eigh(g_num, g_den + eps * np.eye(g_den.shape[0]))
    c = evecs[:, -1]
    g = basis @ c
    g = g / np.linalg.norm(g)

    u1 = solve_dirichlet(op, q1v, g, resonance=res1)
    u2 = solve_dirichlet(op, q2v, g, resonance=res2)
    num1, den1 = _mask_energies(op, u1[op.I], mask.flags)
    num2, den2 = _mask_energies(op, u2[op.I], mask.flags)
    ratio = num1 / (den1 + den2 + eps)
    v_used = _feasible_basis_complement(constraints, op.grid.n_E)
    return LocPotResult(
        ratio=ratio,
        g=g,
        u=u1,
        u2=u2,
        v_basis=v_used,
        ratio1=num1 / den1 if den1 > 0 else np.inf,
        ratio2=num2 / den2 if den2 > 0 else np.inf,
    )


# ---------------------------------------------------------------------------
# Converse checks


@dataclass
class ConverseReport:
    q1_geq_q2: bool
    q2_geq_q1: bool
    verdict_geq: OrderVerdict
    verdict_leq: OrderVerdict
    consistent: bool


def converse_check(op: NonlocalOperator, q1, q2, tol: float = EIG_TOL) -> ConverseReport:
    """Compare the pointwise order of two potentials with the Loewner verdicts.

    The forward direction (pointwise order implies the operator order) is
    exact in this discrete model; the reverse direction is empirical and is
    what this report is for.
    """
    q1v = potential_values(q1)
    q2v = potential_values(q2)
    d1 = assemble_dtn(op, q1v)
    d2 = assemble_dtn(op, q2v)
    delta, _ = dtn_difference(d1, d2)
    v_geq = leq_d(np.zeros_like(delta), delta, d2.resonance.d_q, tol=tol)
    v_geq.direction = "ge"
    v_leq = leq_d(delta, np.zeros_like(delta), d1.resonance.d_q, tol=tol)
    p_geq = bool(np.all(q1v >= q2v))
    p_leq = bool(np.all(q2v >= q1v))
    return ConverseReport(
        q1_geq_q2=p_geq,
        q2_geq_q1=p_leq,
        verdict_geq=v_geq,
        verdict_leq=v_leq,
        consistent=(p_geq == v_geq.holds) and (p_leq == v_leq.holds),
    )


def linearized_converse_check(op: NonlocalOperator, q, r, tol: float = EIG_TOL) -> dict:
    """PSD/NSD classification of the DtN derivative against the sign of r."""
    rv = potential_values(r)
    d = dtn_derivative(op, q, rv)
    psd = neg_eig_count(d, tol=tol) == 0
    nsd = neg_eig_count(-d, tol=tol) == 0
    return {
        "r_nonneg": bool(np.all(rv >= 0)),
        "r_nonpos": bool(np.all(rv <= 0)),
        "derivative_psd": psd,
        "derivative_nsd": nsd,
    }


# ---------------------------------------------------------------------------
# Reconstruction


@dataclass
class CellEstimate:
    cell_id: int
    lower: float
    upper: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass
class ReconstructionResult:
    cells: list
    converged: bool
    sweeps_lower: int
    sweeps_upper: int

    def midpoints(self) -> np.ndarray:
        return np.array([c.midpoint for c in self.cells])


def _count_below(delta: np.ndarray, tol: float) -> int:
    evals = np.linalg.eigvalsh(delta)
    scale = np.max(np.abs(evals)) if evals.size else 0.0
    return int(np.count_nonzero(evals < -tol * scale))


def _order_feasible_sup(op, partition, values, obs: DtnMap, tol: float) -> bool:
    """Feasibility of Lambda(psi) <=_{d(psi)} Lambda_obs for a trial psi."""
    trial = assemble_dtn(op, Potential.from_cells(partition, values))
    delta, _ = dtn_difference(obs, trial)
    return _count_below(delta, tol) <= trial.resonance.d_q


def _order_feasible_inf(op, partition, values, obs: DtnMap, tol: float) -> bool:
    """Feasibility of Lambda(psi) >=_{d_obs} Lambda_obs for a trial psi."""
    trial = assemble_dtn(op, Potential.from_cells(partition, values))
    delta, _ = dtn_difference(obs, trial)
    return _count_below(-delta, tol) <= obs.resonance.d_q


def _bisect_extreme(feasible, lo, hi, tol, maximize):
    """Boundary of a one-sided feasible interval inside [lo, hi].

    Returns None when even the safe end is infeasible (the conditioning
    values poison the test this sweep; the caller keeps the old estimate).
    """
    if maximize:
        if feasible(hi):
            return hi
        if not feasible(lo):
            return None
        a, b = lo, hi  # a feasible, b infeasible
        while b - a > tol:
            mid = 0.5 * (a + b)
            if feasible(mid):
                a = mid
            else:
                b = mid
        return a
    if feasible(lo):
        return lo
    if not feasible(hi):
        return None
    a, b = lo, hi  # a infeasible, b feasible
    while b - a > tol:
        mid = 0.5 * (a + b)
        if feasible(mid):
            b = mid
        else:
            a = mid
    return b


def _coordinate_sweep(op, partition, obs, lo, hi, bisect_tol, tol, mode, max_sweeps):
    """Per-cell bisection sweeps in index order.

    When bisecting one cell, the other cells are conditioned at their
    running estimates nudged by 2*bisect_tol toward the safe side of the
    order test; without the nudge, one cell's bisection slack poisons the
    other cells' tests and the sweep stalls on a spurious fixed point.
    """
    maximize = mode == "sup"
    values = np.full(partition.n_cells, lo if maximize else hi)
    feas = _order_feasible_sup if maximize else _order_feasible_inf
    bias = 2.0 * bisect_tol if maximize else -2.0 * bisect_tol
    sweeps = 0
    converged = False
    for _ in range(max_sweeps):
        sweeps += 1
        max_move = 0.0
        for j in range(partition.n_cells):
            conditioned = np.clip(values - bias, lo, hi)

            def cell_feasible(beta, j=j, conditioned=conditioned):
                trial = conditioned.copy()
                trial[j] = beta
                return feas(op, partition, trial, obs, tol)

            new = _bisect_extreme(cell_feasible, lo, hi, bisect_tol, maximize=maximize)
            if new is not None:
                max_move = max(max_move, abs(new - values[j]))
                values[j] = new
        if max_move <= bisect_tol:
            converged = True
            break
    return values, converged, sweeps


def reconstruct_monotone(
    op: NonlocalOperator,
    dtn_observed: DtnMap,
    partition: Partition,
    bounds: tuple[float, float],
    bisect_tol: float = 0.01,
    tol: float = EIG_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> ReconstructionResult:
    """Bracket each cell value of a partition-constant potential.

    Two coordinate sweeps with per-cell bisection: the lower sweep grows
    each cell value as long as the trial map stays below the observed one
    (threshold d of the trial), the upper sweep shrinks from above with the
    observed map's own threshold. On consistent data the two ends agree to
    within the bisection tolerance; the midpoint is the point estimate.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ValueError("bounds must satisfy lo < hi")
    if bisect_tol <= 0:
        raise ValueError("bisect_tol must be positive")
    lower, conv_lo, sweeps_lo = _coordinate_sweep(
        op, partition, dtn_observed, lo, hi, bisect_tol, tol, "sup", max_sweeps
    )
    upper, conv_hi, sweeps_hi = _coordinate_sweep(
        op, partition, dtn_observed, lo, hi, bisect_tol, tol, "inf", max_sweeps
    )
    cells = [CellEstimate(cell_id=j, lower=float(lower[j]), upper=float(upper[j]))
             for j in range(partition.n_cells)]
    return ReconstructionResult(
        cells=cells,
        converged=conv_lo and conv_hi,
        sweeps_lower=sweeps_lo,
        sweeps_upper=sweeps_hi,
    )
