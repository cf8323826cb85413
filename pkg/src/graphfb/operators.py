"""Graph filter operators: Laplacians, affinity matrices, and their spectra.

Every operator is materialized as a float64 sparse CSR matrix tagged with its
kind. High-pass kinds are constructed as ``I - <low-pass twin>`` entry-wise,
which makes each low-pass/high-pass pair sum to the identity exactly in
floating point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .graph import Graph, is_bipartite, is_connected

log = logging.getLogger(__name__)

DEFAULT_EIG_CAP = 3000


class OperatorKind(str, Enum):
    """Operator family. Values double as the CLI / file-format tokens."""

    L = "L"                          # D - A (combinatorial Laplacian)
    L_SYM = "L_sym"                  # I - D^{-1/2} A D^{-1/2}
    L_RW = "L_rw"                    # I - D^{-1} A
    A_SYM = "A_sym"                  # D^{-1/2} A D^{-1/2}
    A_RW = "A_rw"                    # D^{-1} A
    HAT_A_SYM = "hatA_sym"           # (D+I)^{-1/2} (A+I) (D+I)^{-1/2}
    HAT_A_RW = "hatA_rw"             # (D+I)^{-1} (A+I)
    HAT_L_SYM = "hatL_sym"           # I - hatA_sym
    HAT_L_RW = "hatL_rw"             # I - hatA_rw
    A_LRW = "A_lrw"                  # (g*I + A_rw) / (1+g)   (lazy walk, g=1 classic)
    L_LRW = "L_lrw"                  # I - A_lrw
    HAT_A_RW_GAMMA = "hatA_rw_gamma" # (g*I + D)^{-1} (g*I + A)


#: kinds whose construction takes a positive gamma parameter
GAMMA_KINDS = frozenset({OperatorKind.A_LRW, OperatorKind.L_LRW, OperatorKind.HAT_A_RW_GAMMA})

#: kinds that are symmetric matrices by construction
SYMMETRIC_KINDS = frozenset(
    {
        OperatorKind.L,
        OperatorKind.L_SYM,
        OperatorKind.A_SYM,
        OperatorKind.HAT_A_SYM,
        OperatorKind.HAT_L_SYM,
    }
)

#: kinds whose rows sum to one
ROW_STOCHASTIC_KINDS = frozenset(
    {OperatorKind.A_RW, OperatorKind.HAT_A_RW, OperatorKind.A_LRW, OperatorKind.HAT_A_RW_GAMMA}
)

#: the Laplacian family (valid smoothness/energy operators)
LAPLACIAN_KINDS = frozenset(
    {
        OperatorKind.L,
        OperatorKind.L_SYM,
        OperatorKind.L_RW,
        OperatorKind.HAT_L_SYM,
        OperatorKind.HAT_L_RW,
        OperatorKind.L_LRW,
    }
)

#: kinds that divide by the raw degree and therefore reject isolated nodes
DEGREE_NORMALIZED_KINDS = frozenset(
    {
        OperatorKind.L_SYM,
        OperatorKind.L_RW,
        OperatorKind.A_SYM,
        OperatorKind.A_RW,
        OperatorKind.A_LRW,
        OperatorKind.L_LRW,
    }
)

#: low-pass/high-pass pairs satisfying LP + HP = I
PERFECT_RECONSTRUCTION_PAIRS = (
    (OperatorKind.HAT_A_SYM, OperatorKind.HAT_L_SYM),
    (OperatorKind.HAT_A_RW, OperatorKind.HAT_L_RW),
    (OperatorKind.A_LRW, OperatorKind.L_LRW),
)


@dataclass(frozen=True)
class SparseOperator:
    """A built graph operator: its kind, optional gamma, CSR matrix, and the

    node degrees of the graph it was built from (needed to symmetrize the
    row-stochastic kinds for eigendecomposition).
    """

    kind: OperatorKind
    gamma: float | None
    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return self.kind in SYMMETRIC_KINDS

    def apply(self, x):
        return apply(self, x)


def _check_gamma(kind, gamma):
    if kind in GAMMA_KINDS:
        if gamma is None:
            raise ValueError(f"{kind.value} requires gamma > 0")
        gamma = float(gamma)
        if not np.isfinite(gamma) or gamma <= 0:
            raise ValueError(f"invalid gamma {gamma!r} for {kind.value}")
        return gamma
    if gamma is not None:
        raise ValueError(f"{kind.value} does not take a gamma parameter")
    return None


def _as_sorted_csr(m) -> sp.csr_matrix:
    m = m.tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def build_operator(graph: Graph, kind, gamma=None) -> SparseOperator:
    """Materialize one operator of the given kind for `graph`.

    Kinds that normalize by raw degree reject graphs with isolated nodes;
    the renormalized (hat) kinds accept them because of the added self-loop.
    """
    kind = OperatorKind(kind)
    gamma = _check_gamma(kind, gamma)
    deg = graph.degrees.astype(np.float64)
    if kind in DEGREE_NORMALIZED_KINDS and np.any(deg == 0):
        i = int(np.argmin(deg))
        raise ValueError(f"isolated node at index {i}: cannot build {kind.value}")

    adj = graph.adjacency()
    n = graph.n_nodes
    eye = sp.identity(n, format="csr")

    if kind is OperatorKind.L:
        mat = sp.diags(deg, format="csr") - adj
    elif kind is OperatorKind.A_SYM:
        dinv_sqrt = sp.diags(1.0 / np.sqrt(deg))
        mat = dinv_sqrt @ adj @ dinv_sqrt
    elif kind is OperatorKind.L_SYM:
        mat = eye - build_operator(graph, OperatorKind.A_SYM).matrix
    elif kind is OperatorKind.A_RW:
        mat = sp.diags(1.0 / deg) @ adj
    elif kind is OperatorKind.L_RW:
        mat = eye - build_operator(graph, OperatorKind.A_RW).matrix
    elif kind is OperatorKind.HAT_A_RW:
        mat = sp.diags(1.0 / (deg + 1.0)) @ (adj + eye)
    elif kind is OperatorKind.HAT_A_SYM:
        dinv_sqrt = sp.diags(1.0 / np.sqrt(deg + 1.0))
        mat = dinv_sqrt @ (adj + eye) @ dinv_sqrt
    elif kind is OperatorKind.HAT_L_RW:
        mat = eye - build_operator(graph, OperatorKind.HAT_A_RW).matrix
    elif kind is OperatorKind.HAT_L_SYM:
        mat = eye - build_operator(graph, OperatorKind.HAT_A_SYM).matrix
    elif kind is OperatorKind.A_LRW:
        a_rw = build_operator(graph, OperatorKind.A_RW).matrix
        mat = (eye * gamma + a_rw) * (1.0 / (1.0 + gamma))
    elif kind is OperatorKind.L_LRW:
        mat = eye - build_operator(graph, OperatorKind.A_LRW, gamma).matrix
    elif kind is OperatorKind.HAT_A_RW_GAMMA:
        mat = sp.diags(1.0 / (deg + gamma)) @ (adj + eye * gamma)
    else:  # pragma: no cover
        raise ValueError(f"unhandled kind {kind}")

    return SparseOperator(kind=kind, gamma=gamma, matrix=_as_sorted_csr(mat), degrees=deg)


def apply(op, x) -> np.ndarray:
    """Sparse-times-dense product ``op @ x`` (x may be a vector or matrix)."""
    mat = op.matrix if isinstance(op, SparseOperator) else op
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != mat.shape[1]:
        raise ValueError(f"dimension mismatch: operator is {mat.shape}, x has {x.shape[0]} rows")
    return mat @ x


def _symmetrizing_scale(op: SparseOperator) -> np.ndarray | None:
    """Diagonal s such that diag(s) M diag(1/s) is symmetric, or None."""
    kind = op.kind
    if kind in SYMMETRIC_KINDS:
        return None
    if kind in (OperatorKind.A_RW, OperatorKind.L_RW, OperatorKind.A_LRW, OperatorKind.L_LRW):
        return np.sqrt(op.degrees)
    if kind in (OperatorKind.HAT_A_RW, OperatorKind.HAT_L_RW):
        return np.sqrt(op.degrees + 1.0)
    if kind is OperatorKind.HAT_A_RW_GAMMA:
        return np.sqrt(op.degrees + op.gamma)
    raise ValueError(f"no symmetric twin known for {kind.value}")  # pragma: no cover


def dense_eig(op: SparseOperator, size_cap=DEFAULT_EIG_CAP):
    """Full eigendecomposition for verification on small graphs.

    Symmetric kinds are decomposed directly with a dense symmetric solver.
    Row-stochastic kinds are first similarity-transformed to their symmetric
    twin; the returned eigenvectors are the rescaled twin vectors, so they
    satisfy ``op @ u = lam * u`` but are orthonormal only in the
    degree-weighted inner product.

    Returns
    -------
    (eigenvalues, eigenvectors)
        Eigenvalues ascending; eigenvectors as matrix columns.
    """
    if op.n > size_cap:
        raise ValueError(f"size cap exceeded: n={op.n} > {size_cap}")
    scale = _symmetrizing_scale(op)
    dense = op.matrix.toarray()
    if scale is None:
        sym = dense
    else:
        sym = dense * scale[:, None] / scale[None, :]
    sym = 0.5 * (sym + sym.T)  # scrub rounding asymmetry before eigh
    w, v = scipy.linalg.eigh(sym)
    if scale is not None:
        v = v / scale[:, None]
    return w, v


def graph_fourier(basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Coefficients of `x` in the orthonormal eigenbasis (columns of `basis`)."""
    basis = np.asarray(basis, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.shape[0]:
        raise ValueError("dimension mismatch between basis and signal")
    return basis.T @ x


@dataclass(frozen=True)
class EigengapResult:
    ratio_lazy: float
    ratio_renorm: float
    holds: bool


def eigengap_check(graph: Graph, gamma, tol=1e-10) -> EigengapResult:
    """Compare the top eigengap ratio of the lazy and renormalized walks.

    Computes lambda_2/lambda_1 for the gamma-lazy random walk and for the
    gamma-renormalized walk (via their symmetric twins) and reports whether
    the lazy ratio dominates within `tol`. Requires a connected,
    non-bipartite graph without isolated nodes and gamma > 0.
    """
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    deg = graph.degrees.astype(np.float64)
    if np.any(deg == 0):
        raise ValueError(f"isolated node at index {int(np.argmin(deg))}")
    if not is_connected(graph):
        raise ValueError("graph is disconnected")
    if is_bipartite(graph):
        raise ValueError("graph is bipartite")

    adj = graph.adjacency().toarray()
    n = graph.n_nodes
    dinv_sqrt = 1.0 / np.sqrt(deg)
    a_sym = adj * dinv_sqrt[:, None] * dinv_sqrt[None, :]
    lazy_twin = (gamma * np.eye(n) + a_sym) / (1.0 + gamma)
    sg = 1.0 / np.sqrt(deg + gamma)
    renorm_twin = (adj + gamma * np.eye(n)) * sg[:, None] * sg[None, :]

    w_lazy = scipy.linalg.eigh(lazy_twin, eigvals_only=True)
    w_renorm = scipy.linalg.eigh(renorm_twin, eigvals_only=True)
    for name, w in (("lazy", w_lazy), ("renormalized", w_renorm)):
        if abs(w[-1] - 1.0) > 1e-10:
            raise RuntimeError(f"top eigenvalue of {name} walk is {w[-1]}, expected 1")
    ratio_lazy = float(w_lazy[-2] / w_lazy[-1])
    ratio_renorm = float(w_renorm[-2] / w_renorm[-1])
    return EigengapResult(
        ratio_lazy=ratio_lazy,
        ratio_renorm=ratio_renorm,
        holds=bool(ratio_lazy >= ratio_renorm - tol),
    )


def export_matrix_market(op: SparseOperator, path) -> None:
    """Write the operator in MatrixMarket coordinate format (atomic)."""
    import os
    import tempfile

    path = str(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".mtx.tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            scipy.io.mmwrite(fh, op.matrix.tocoo(), comment=f"kind={op.kind.value}")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
