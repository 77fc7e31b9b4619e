"""Interior Dirichlet solves, resonance bookkeeping, and discrete DtN maps.

The interior stiffness K_q = L_II + m diag(q) may be indefinite or singular
for negative potentials. A singular K_q means the Dirichlet problem is
solvable only for exterior data whose load is orthogonal to the kernel N_q;
the DtN map is then defined on that admissible subspace and assembled with
a kernel-aware pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ResonanceViolation, ResonantPotential
from .fracops import GridSpec, NonlocalOperator, bilinear_form, potential_values

KERNEL_TOL = 1e-10
SOLVE_RTOL = 1e-8


@dataclass
class Potential:
    """Real potential sampled on the interior nodes."""

    values: np.ndarray
    partition_id: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("potential values must be a vector over interior nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential values must be finite")

    @property
    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def constant(cls, grid: GridSpec, c: float, partition_id: str | None = None) -> "Potential":
        return cls(values=np.full(grid.n_I, float(c)), partition_id=partition_id)

    @classmethod
    def from_cells(cls, partition, cell_values, partition_id: str | None = None) -> "Potential":
        return cls(values=partition.values_to_nodes(cell_values), partition_id=partition_id)


@dataclass
class ResonanceData:
    """Kernel and inertia data of the interior stiffness K_q.

    kernel_basis : orthonormal columns spanning N_q
    d_q          : number of negative eigenvalues of K_q (beyond tolerance)
    gap          : smallest eigenvalue magnitude outside the kernel band
    evals, evecs : full eigendecomposition of K_q, cached for reuse
    """

    kernel_basis: np.ndarray
    dim_nq: int
    d_q: int
    gap: float
    tol: float
    evals: np.ndarray
    evecs: np.ndarray

    @property
    def nonresonant(self) -> bool:
        return self.dim_nq == 0


def stiffness(op: NonlocalOperator, q) -> np.ndarray:
    """Interior stiffness K_q = L_II + m diag(q)."""
    qv = potential_values(q)
    if qv.shape != (op.grid.n_I,):
        raise ValueError("potential must be defined on interior nodes")
    k = op.L_II.copy()
    k[np.diag_indices_from(k)] += op.m * qv
    return k


def resonance_data(op: NonlocalOperator, q, tol: float = KERNEL_TOL) -> ResonanceData:
    """Classify the spectrum of K_q with a scale-free kernel threshold."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    k = stiffness(op, q)
    evals, evecs = np.linalg.eigh(k)
    scale = np.max(np.abs(evals)) if evals.size else 0.0
    thr = tol * scale
    in_kernel = np.abs(evals) <= thr
    d_q = int(np.count_nonzero(evals < -thr))
    outside = np.abs(evals[~in_kernel])
    gap = float(outside.min()) if outside.size else np.inf
    return ResonanceData(
        kernel_basis=evecs[:, in_kernel],
        dim_nq=int(np.count_nonzero(in_kernel)),
        d_q=d_q,
        gap=gap,
        tol=tol,
        evals=evals,
        evecs=evecs,
    )


def _kernel_aware_apply(res: ResonanceData, rhs: np.ndarray) -> np.ndarray:
    """Apply the pseudo-inverse of K_q on the complement of its kernel.

    rhs may be a vector or a matrix of stacked right-hand side columns.
    """
    thr = res.tol * (np.max(np.abs(res.evals)) if res.evals.size else 0.0)
    keep = np.abs(res.evals) > thr
    coeffs = res.evecs[:, keep].T @ rhs
    scaled = (coeffs.T / res.evals[keep]).T
    return res.evecs[:, keep] @ scaled


def solve_dirichlet(
    op: NonlocalOperator,
    q,
    g: np.ndarray,
    f: np.ndarray | None = None,
    resonance: ResonanceData | None = None,
    rtol: float = SOLVE_RTOL,
) -> np.ndarray:
    """Solve K_q u_I = m f - L_IE g and return the full node vector with u_E = g.

    For resonant potentials the load must be orthogonal to the kernel N_q
    (otherwise ResonanceViolation is raised) and the returned interior part
    is the unique solution orthogonal to N_q.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (op.grid.n_E,):
        raise ValueError("g must be defined on exterior nodes")
    if f is None:
        f = np.zeros(op.grid.n_I)
    f = np.asarray(f, dtype=float)
    if f.shape != (op.grid.n_I,):
        raise ValueError("f must be defined on interior nodes")
    if resonance is None:
        resonance = resonance_data(op, q)

    rhs = op.m * f - op.L_IE @ g
    if resonance.dim_nq > 0:
        viol = np.linalg.norm(resonance.kernel_basis.T @ rhs)
        if viol > rtol * np.linalg.norm(rhs):
            raise ResonanceViolation(
                f"load not orthogonal to the {resonance.dim_nq}-dimensional kernel "
                f"(violation {viol:.3e})"
            )
    u = np.zeros(op.grid.n_nodes)
    u[op.I] = _kernel_aware_apply(resonance, rhs)
    u[op.E] = g
    return u


def neumann_trace(op: NonlocalOperator, u: np.ndarray) -> np.ndarray:
    """Exterior block of L u."""
    u = np.asarray(u, dtype=float)
    if u.shape != (op.grid.n_nodes,):
        raise ValueError("u must be defined on all grid nodes")
    return op.L_EI @ u[op.I] + op.L_EE @ u[op.E]


def solution_operator(op: NonlocalOperator, q, resonance: ResonanceData | None = None) -> np.ndarray:
    """Matrix S with S[:, a] = interior solution for the a-th exterior basis vector.

    Columns corresponding to inadmissible basis vectors are the projected
    solves; they coincide with the true solutions exactly on admissible data.
    """
    if resonance is None:
        resonance = resonance_data(op, q)
    return -_kernel_aware_apply(resonance, op.L_IE)


@dataclass
class DtnMap:
    """Discrete DtN operator stored as a full exterior matrix plus its
    admissible-domain basis (identity when the potential is non-resonant)."""

    matrix: np.ndarray
    domain_basis: np.ndarray
    resonance: ResonanceData
    op: NonlocalOperator
    potential: Potential | None = None
    potential_id: str | None = None

    @property
    def n_E(self) -> int:
        return self.matrix.shape[0]

    @property
    def codim(self) -> int:
        return self.n_E - self.domain_basis.shape[1]


def _admissible_basis(op: NonlocalOperator, res: ResonanceData) -> np.ndarray:
    """Orthonormal basis of {g : L_IE g orthogonal to N_q}."""
    n_e = op.grid.n_E
    if res.dim_nq == 0:
        return np.eye(n_e)
    a = res.kernel_basis.T @ op.L_IE
    u, sing, vt = np.linalg.svd(a, full_matrices=True)
    smax = sing.max() if sing.size else 0.0
    rank = int(np.count_nonzero(sing > KERNEL_TOL * max(smax, 1.0)))
    return vt[rank:].T


def assemble_dtn(
    op: NonlocalOperator,
    q,
    tol: float = KERNEL_TOL,
    potential_id: str | None = None,
) -> DtnMap:
    """Schur complement L_EE - L_EI K_q^+ L_IE with kernel-aware inverse."""
    qv = potential_values(q)
    res = resonance_data(op, qv, tol=tol)
    s = solution_operator(op, qv, resonance=res)
    mat = op.L_EE + op.L_EI @ s
    mat = 0.5 * (mat + mat.T)
    pot = q if isinstance(q, Potential) else Potential(values=qv)
    if potential_id is None:
        potential_id = pot.partition_id
    return DtnMap(
        matrix=mat,
        domain_basis=_admissible_basis(op, res),
        resonance=res,
        op=op,
        potential=pot,
        potential_id=potential_id,
    )


def dtn_derivative(
    op: NonlocalOperator,
    q,
    r,
    resonance: ResonanceData | None = None,
) -> np.ndarray:
    """Derivative of the DtN map in direction r: the Gram matrix of the
    reference solutions weighted by m r. Requires a non-resonant q."""
    if resonance is None:
        resonance = resonance_data(op, q)
    if resonance.dim_nq > 0:
        raise ResonantPotential(
            f"DtN derivative needs a trivial kernel; dim N_q = {resonance.dim_nq}"
        )
    rv = potential_values(r)
    if rv.shape != (op.grid.n_I,):
        raise ValueError("direction r must be defined on interior nodes")
    s = solution_operator(op, q, resonance=resonance)
    d = s.T @ (op.m * rv[:, None] * s)
    return 0.5 * (d + d.T)


def dtn_difference(d1: DtnMap, d2: DtnMap) -> tuple[np.ndarray, np.ndarray]:
    """Project Lambda1 - Lambda2 onto the intersection of their domains.

    Returns (reduced matrix, orthonormal common-domain basis). For two
    non-resonant maps the basis is the identity and the matrix the plain
    difference.
    """
    if d1.op is not d2.op:
        same = (
            d1.op.L.shape == d2.op.L.shape
            and d1.op.s == d2.op.s
            and np.array_equal(d1.op.grid.interior_idx, d2.op.grid.interior_idx)
        )
        if not same:
            raise ValueError("DtN maps were assembled on different grids")
    if d1.resonance.dim_nq == 0 and d2.resonance.dim_nq == 0:
        basis = np.eye(d1.n_E)
        return d1.matrix - d2.matrix, basis
    rows = []
    for d in (d1, d2):
        if d.resonance.dim_nq > 0:
            rows.append(d.resonance.kernel_basis.T @ d.op.L_IE)
    a = np.vstack(rows)
    u, sing, vt = np.linalg.svd(a, full_matrices=True)
    smax = sing.max() if sing.size else 0.0
    rank = int(np.count_nonzero(sing > KERNEL_TOL * max(smax, 1.0)))
    basis = vt[rank:].T
    diff = basis.T @ (d1.matrix - d2.matrix) @ basis
    return 0.5 * (diff + diff.T), basis


def dtn_quadratic_form(op: NonlocalOperator, q, g: np.ndarray, resonance=None) -> float:
    """g' Lambda(q) g evaluated through the solved field (energy identity)."""
    u = solve_dirichlet(op, q, g, resonance=resonance)
    return bilinear_form(op, q, u, u)
