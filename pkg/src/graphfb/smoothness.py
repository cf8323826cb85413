"""Dirichlet energy, signal energy, and the S-value smoothness measure.

For a signal block X and a Laplacian-family operator M, the Dirichlet energy
is tr(X^T M X), the signal energy is tr(X^T X), and the S-value is their
ratio. Small S means the block is smooth along the graph's edges; S can
exceed 1 and the non-smooth remainder E - E_S can be negative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, row_normalize_features
from .operators import LAPLACIAN_KINDS, OperatorKind, SparseOperator, build_operator

log = logging.getLogger(__name__)

#: above this many summands, energies use compensated (Kahan) summation
KAHAN_THRESHOLD = 100_000

FEATURE_MODES = ("raw", "rownorm")


def _kahan_block_sum(terms: np.ndarray) -> float:
    """Kahan-compensated sum over rows, vectorized across columns."""
    total = np.zeros(terms.shape[1])
    comp = np.zeros(terms.shape[1])
    for row in terms:
        y = row - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return float(math.fsum(total))


def _block_sum(terms: np.ndarray) -> float:
    terms = np.atleast_2d(terms)
    if terms.size > KAHAN_THRESHOLD:
        return _kahan_block_sum(terms)
    return float(terms.sum())


def signal_energy(x) -> float:
    """Squared Frobenius norm tr(X^T X)."""
    x = np.asarray(x, dtype=np.float64)
    return _block_sum(x * x)


def dirichlet_energy(op: SparseOperator, x) -> float:
    """tr(X^T M X), summed column by column.

    Emits a warning (not an error) when `op` is not a Laplacian-family kind,
    since probing affinity kinds can be intentional.
    """
    x = np.asarray(x, dtype=np.float64)
    if op.kind not in LAPLACIAN_KINDS:
        log.warning("dirichlet_energy called with non-Laplacian kind %s", op.kind.value)
    if x.shape[0] != op.n:
        raise ValueError(f"dimension mismatch: operator n={op.n}, signal rows={x.shape[0]}")
    return _block_sum(x * (op.matrix @ x))


def energy_decomposition(op: SparseOperator, x):
    """Return (E_S, E, E_NS) with E_NS = E - E_S (may be negative)."""
    e_s = dirichlet_energy(op, x)
    e = signal_energy(x)
    return e_s, e, e - e_s


def s_value(op: SparseOperator, x) -> float:
    """Smoothness S = dirichlet_energy / signal_energy of a signal block."""
    e = signal_energy(x)
    if e == 0.0:
        raise ValueError("zero signal")
    return dirichlet_energy(op, x) / e


def one_hot(labels, n_classes) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label outside [0, {n_classes})")
    return np.eye(n_classes, dtype=np.float64)[labels]


@dataclass(frozen=True)
class SmoothnessReport:
    """S-values of a dataset's features and one-hot labels under one operator."""

    operator_kind: OperatorKind
    feature_S: float
    label_S: float
    diff: float  # label_S - feature_S
    energies: dict
    feature_mode: str
    gamma: float | None = None

    def to_dict(self):
        return {
            "operator": self.operator_kind.value,
            "gamma": self.gamma,
            "feature_S": self.feature_S,
            "label_S": self.label_S,
            "diff": self.diff,
            "feature_mode": self.feature_mode,
            "energies": self.energies,
        }


def smoothness_report(graph: Graph, operator_kind, feature_mode="raw", gamma=None) -> SmoothnessReport:
    """Measure feature and label smoothness of a dataset under one operator.

    feature_mode "rownorm" rescales feature rows to unit L1 sum before
    measuring; labels are always encoded one-hot.
    """
    kind = OperatorKind(operator_kind)
    if kind not in LAPLACIAN_KINDS:
        raise ValueError(f"{kind.value} is not a Laplacian-family operator")
    if feature_mode not in FEATURE_MODES:
        raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
    op = build_operator(graph, kind, gamma)
    feats = graph.features
    if feature_mode == "rownorm":
        feats = row_normalize_features(feats)
    f_es, f_e, f_ens = energy_decomposition(op, feats)
    labels_block = one_hot(graph.labels, graph.n_classes)
    l_es, l_e, l_ens = energy_decomposition(op, labels_block)
    if f_e == 0.0:
        raise ValueError("zero signal: features have no energy")
    feature_s = f_es / f_e
    label_s = l_es / l_e
    return SmoothnessReport(
        operator_kind=kind,
        feature_S=feature_s,
        label_S=label_s,
        diff=label_s - feature_s,
        energies={
            "feature": {"E_S": f_es, "E": f_e, "E_NS": f_ens},
            "label": {"E_S": l_es, "E": l_e, "E_NS": l_ens},
        },
        feature_mode=feature_mode,
        gamma=gamma,
    )


def render_table(reports: dict) -> str:
    """Aligned text table of per-dataset smoothness reports."""
    names = list(reports)
    width = max([7] + [len(n) for n in names]) + 2
    header = "".ljust(24) + "".join(n.rjust(width) for n in names)
    rows = [header]
    for label, attr in (
        ("input feature", "feature_S"),
        ("label", "label_S"),
        ("diff (label - feature)", "diff"),
    ):
        cells = "".join(f"{getattr(reports[n], attr):.3f}".rjust(width) for n in names)
        rows.append(label.ljust(24) + cells)
    return "\n".join(rows)
