"""Loewner-order comparisons up to a finite-dimensional defect.

A <=_d B holds when B - A has at most d eigenvalues below the (relative)
negativity threshold; this counts the maximal dimension of a subspace on
which the difference form is negative, which is the matrix inertia.
Ties inside the dead zone count as non-negative (permissive reading).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EIG_TOL = 1e-8
SYM_RTOL = 1e-10


@dataclass
class OrderVerdict:
    """Outcome of a finite-defect order test.

    neg_count is the inertia of the primary difference; for the two-sided
    test neg_count_rev carries the reversed direction and holds requires
    both counts to stay within d_threshold.
    """

    holds: bool
    neg_count: int
    d_threshold: int
    eigenvalues: np.ndarray
    tol: float
    direction: str
    neg_count_rev: int | None = None
    witness: np.ndarray | None = None


def _check_symmetric(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("expected a square matrix")
    nrm = np.linalg.norm(s)
    if nrm > 0 and np.linalg.norm(s - s.T) > SYM_RTOL * nrm:
        raise ValueError("matrix is not symmetric within tolerance")
    return 0.5 * (s + s.T)


def _inertia(s: np.ndarray, tol: float) -> tuple[int, np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(s)
    scale = np.max(np.abs(evals)) if evals.size else 0.0
    neg = evals < -tol * scale
    return int(np.count_nonzero(neg)), evals, evecs[:, neg]


def neg_eig_count(s: np.ndarray, tol: float = EIG_TOL) -> int:
    """Number of eigenvalues below -tol * ||S||_2."""
    count, _, _ = _inertia(_check_symmetric(s), tol)
    return count


def leq_d(
    a: np.ndarray,
    b: np.ndarray,
    d: int,
    tol: float = EIG_TOL,
    want_witness: bool = False,
) -> OrderVerdict:
    """Test A <=_d B through the inertia of B - A."""
    a = _check_symmetric(a)
    b = _check_symmetric(b)
    if a.shape != b.shape:
        raise ValueError("matrices must share a common basis")
    if d < 0:
        raise ValueError("d must be non-negative")
    count, evals, wit = _inertia(b - a, tol)
    return OrderVerdict(
        holds=count <= d,
        neg_count=count,
        d_threshold=d,
        eigenvalues=evals,
        tol=tol,
        direction="le",
        witness=wit if want_witness else None,
    )


def geq_d(a, b, d: int, tol: float = EIG_TOL, want_witness: bool = False) -> OrderVerdict:
    """Test A >=_d B, i.e. B <=_d A."""
    v = leq_d(b, a, d, tol=tol, want_witness=want_witness)
    v.direction = "ge"
    return v


def eq_fin(a: np.ndarray, b: np.ndarray, d: int, tol: float = EIG_TOL) -> OrderVerdict:
    """Two-sided test: both A <=_d B and B <=_d A."""
    fwd = leq_d(a, b, d, tol=tol)
    rev = leq_d(b, a, d, tol=tol)
    return OrderVerdict(
        holds=max(fwd.neg_count, rev.neg_count) <= d,
        neg_count=fwd.neg_count,
        d_threshold=d,
        eigenvalues=fwd.eigenvalues,
        tol=tol,
        direction="eq_fin",
        neg_count_rev=rev.neg_count,
    )


def projected_operator_norm(s: np.ndarray, basis: np.ndarray) -> float:
    """Spectral norm of basis' S basis for an orthonormal basis."""
    s = _check_symmetric(s)
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != s.shape[0]:
        raise ValueError("basis columns must live in the space of S")
    gram = basis.T @ basis
    if np.linalg.norm(gram - np.eye(basis.shape[1])) > 1e-10:
        raise ValueError("basis is not orthonormal (Gram residual too large)")
    proj = basis.T @ s @ basis
    proj = 0.5 * (proj + proj.T)
    if proj.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(proj))))
