"""Hankel rank restoration and signal-subspace estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import hankel

logger = logging.getLogger(__name__)

# Relative floor on eigenvalues seen by the order criteria. Without it the
# round-off tail of noiseless data looks like structured signal.
_EIG_FLOOR = 1e-20


@dataclass(frozen=True)
class HankelParams:
    rows: int
    cols_minus_one: int

    @property
    def cols(self) -> int:
        return self.cols_minus_one + 1

    @property
    def length(self) -> int:
        """Vector length these parameters consume, ``rows + Q``."""
        return self.rows + self.cols_minus_one

    @classmethod
    def for_length(cls, m: int, q: Optional[int] = None) -> "HankelParams":
        """Parameters for slow-time vectors of length ``m``; ``Q`` defaults to ``m // 3``."""
        if q is None:
            q = m // 3
        return cls(m - q, q)

    def check_order(self, order: int) -> list[str]:
        """Warnings if the matrices are too small to hold ``order`` modes."""
        out = []
        if self.rows <= order:
            out.append(f"rows={self.rows} should exceed the model order {order}")
        if self.cols < order:
            out.append(f"Q+1={self.cols} should be at least the model order {order}")
        return out


@dataclass
class BlockHankel:
    blocks: list
    stacked: np.ndarray
    params: HankelParams


@dataclass
class SubspaceEstimate:
    basis: np.ndarray
    singular_values: np.ndarray
    model_order: int
    order_criterion: str
    rows_per_block: int


def build_hankel(s_l, p: HankelParams) -> np.ndarray:
    """Hankel matrix ``H[i, j] = s_l[i + j]`` of shape ``rows x (Q + 1)``."""
    s_l = np.asarray(s_l)
    if p.rows < 1 or p.cols_minus_one < 1:
        raise ValueError(f"rows and Q must be >= 1, got {p}")
    if s_l.ndim != 1 or s_l.size != p.length:
        raise ValueError(f"vector of length {s_l.size} does not match rows + Q = {p.length}")
    return hankel(s_l[:p.rows], s_l[p.rows - 1:])


def stack_blocks(snap, p: HankelParams) -> BlockHankel:
    """Per-sequence Hankel matrices stacked vertically in sequence order."""
    blocks = [build_hankel(v, p) for v in np.asarray(snap.vectors)]
    return BlockHankel(blocks, np.vstack(blocks), p)


def _log_likelihood_term(eigs_tail: np.ndarray) -> float:
    """``(p - k) * log(arithmetic mean / geometric mean)`` of the noise eigenvalues."""
    n = eigs_tail.size
    arith = np.mean(eigs_tail)
    geo = np.exp(np.mean(np.log(eigs_tail)))
    return n * np.log(arith / geo)


def detect_order(singular_values, n_snapshots: int, criterion: str = "mdl") -> int:
    """Number of signal components by AIC or MDL (Wax-Kailath form).

    ``singular_values`` are those of the data matrix, in descending order;
    their squares play the role of covariance eigenvalues. ``n_snapshots``
    is the number of observations per eigenvalue dimension.
    """
    sv = np.asarray(singular_values, dtype=float)
    eigs = sv ** 2
    if eigs[0] <= 0:
        return 0
    eigs = np.maximum(eigs, eigs[0] * _EIG_FLOOR)
    p = eigs.size
    n = n_snapshots
    scores = np.empty(p)
    for k in range(p):
        ll = n * _log_likelihood_term(eigs[k:])
        if criterion == "aic":
            scores[k] = 2 * ll + 2 * k * (2 * p - k)
        elif criterion == "mdl":
            scores[k] = ll + 0.5 * k * (2 * p - k) * np.log(n)
        else:
            raise ValueError(f"unknown order criterion {criterion!r}")
    return int(np.argmin(scores))


def estimate_subspace(h: BlockHankel, order: Optional[int] = None, criterion: str = "mdl") -> SubspaceEstimate:
    """Dominant left singular vectors of the stacked block-Hankel matrix.

    With ``order`` given the dimension is fixed; otherwise it is detected
    from the singular spectrum with ``criterion`` (``"mdl"`` or ``"aic"``).
    """
    H = h.stacked
    if H.size == 0:
        raise ValueError("empty block-Hankel matrix")
    U, sv, _ = np.linalg.svd(H, full_matrices=False)
    if order is None:
        d = detect_order(sv, H.shape[0], criterion)
        used = criterion
    else:
        d = int(order)
        used = "fixed"
    if d < 1 or d > min(H.shape):
        raise ValueError(f"model order {d} outside [1, {min(H.shape)}]")
    for msg in h.params.check_order(d):
        logger.warning(msg)
    return SubspaceEstimate(U[:, :d], sv, d, used, h.params.rows)
