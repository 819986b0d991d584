"""Reduced quartic cost in the quaternion after linear elimination.

For noisy directions z_i, the per-correspondence constraint error
refactors to ``eta_i = (z_i z_i^T - I)(R X_i - (S W b) c_i + V W b)``,
which is quadratic in the quaternion entries.  The summed squared error
is therefore a quartic form ``C'(q) = m(q)^T Q m(q)`` over the 10-vector
of degree-2 quaternion monomials

    m(q) = (q0^2, q0q1, q0q2, q0q3, q1^2, q1q2, q1q3, q2^2, q2q3, q3^2).

In fix-scale mode the eliminated unknowns are affine in the rotation and
the cost picks up quadratic and constant pieces; these are homogenized
with powers of ``q^T q`` so the same 10x10 representation applies on the
unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .elimination import EliminationMatrices
from .errors import InvalidInputError
from .geometry import Correspondence

# Index pairs (a, b) of the degree-2 monomials q_a q_b.
MONOMIAL_PAIRS = ((0, 0), (0, 1), (0, 2), (0, 3),
                  (1, 1), (1, 2), (1, 3),
                  (2, 2), (2, 3), (3, 3))

# Selector with m(q) . SQ_NORM = q^T q.
SQ_NORM = np.zeros(10)
SQ_NORM[[0, 4, 7, 9]] = 1.0


def _rotation_coefficients() -> np.ndarray:
    """9x10 map MR with vec_rowmajor(R) = MR @ m(q) for unit q."""
    MR = np.zeros((9, 10))
    m = {pair: i for i, pair in enumerate(MONOMIAL_PAIRS)}

    def put(row, terms):
        for pair, coef in terms:
            MR[row, m[pair]] = coef

    put(0, [((0, 0), 1), ((1, 1), 1), ((2, 2), -1), ((3, 3), -1)])   # R00
    put(1, [((1, 2), 2), ((0, 3), -2)])                              # R01
    put(2, [((1, 3), 2), ((0, 2), 2)])                               # R02
    put(3, [((1, 2), 2), ((0, 3), 2)])                               # R10
    put(4, [((0, 0), 1), ((1, 1), -1), ((2, 2), 1), ((3, 3), -1)])   # R11
    put(5, [((2, 3), 2), ((0, 1), -2)])                              # R12
    put(6, [((1, 3), 2), ((0, 2), -2)])                              # R20
    put(7, [((2, 3), 2), ((0, 1), 2)])                               # R21
    put(8, [((0, 0), 1), ((1, 1), -1), ((2, 2), -1), ((3, 3), 1)])   # R22
    return MR


MR = _rotation_coefficients()


def _monomial_hessians() -> np.ndarray:
    H = np.zeros((10, 4, 4))
    for i, (a, b) in enumerate(MONOMIAL_PAIRS):
        H[i, a, b] += 1.0
        H[i, b, a] += 1.0
    return H


MONOMIAL_HESSIANS = _monomial_hessians()


def monomials(q: np.ndarray) -> np.ndarray:
    """m(q); accepts a (4,) quaternion or a (k, 4) batch."""
    q = np.asarray(q, dtype=float)
    cols = [q[..., a] * q[..., b] for a, b in MONOMIAL_PAIRS]
    return np.stack(cols, axis=-1)


def monomial_jacobian(q: np.ndarray) -> np.ndarray:
    """Jacobian dm/dq, shape (..., 10, 4)."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (10, 4))
    for i, (a, b) in enumerate(MONOMIAL_PAIRS):
        out[..., i, a] += q[..., b]
        out[..., i, b] += q[..., a]
    return out


@dataclass(frozen=True)
class QuarticCost:
    """Quartic form C'(q) = m(q)^T Q m(q) with Q symmetric 10x10 PSD on m's range."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (10, 10) or not np.all(np.isfinite(Q)):
            raise InvalidInputError("Q must be a finite 10x10 matrix")
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    def evaluate(self, q: np.ndarray) -> np.ndarray:
        m = monomials(q)
        return np.sum((m @ self.Q) * m, axis=-1)

    def gradient(self, q: np.ndarray) -> np.ndarray:
        m = monomials(q)
        J = monomial_jacobian(q)
        Qm = m @ self.Q
        return 2.0 * np.squeeze(Qm[..., None, :] @ J, axis=-2)

    def hessian(self, q: np.ndarray) -> np.ndarray:
        m = monomials(q)
        J = monomial_jacobian(q)
        Qm = m @ self.Q
        JT = np.swapaxes(J, -1, -2)
        H = 2.0 * (JT @ (self.Q @ J))
        H += 2.0 * (Qm @ MONOMIAL_HESSIANS.reshape(10, 16)).reshape(q.shape[:-1] + (4, 4))
        return H


def cost_gradient(cost: QuarticCost, q) -> np.ndarray:
    """Analytic gradient of C'; each component is a cubic in q."""
    return cost.gradient(np.asarray(q, dtype=float))


def direct_cost(correspondences: Sequence[Correspondence], elim: EliminationMatrices, R: np.ndarray) -> float:
    """Term-by-term evaluation of the summed squared constraint errors.

    Independent of the 10x10 representation; used as its oracle and for
    candidate costs.
    """
    _, s, t = elim.solve_linear(R)
    c, z, X = elim.origins, elim.directions, elim.points
    inner = X @ np.asarray(R).T - s * c + t
    eta = np.einsum("ia,ib,ib->ia", z, z, inner) - inner
    return float(np.sum(eta * eta))


def build_quartic_cost(correspondences: Sequence[Correspondence], elim: EliminationMatrices) -> QuarticCost:
    """Assemble Q so that m(q)^T Q m(q) equals the summed squared errors."""
    c, z, X = elim.origins, elim.directions, elim.points
    n = elim.n

    # P maps vec_rowmajor(R) to the stacked R X_i: P[3i+a, 3a+k] = X[i, k].
    P = np.zeros((3 * n, 9))
    for a in range(3):
        P[a::3, 3 * a:3 * a + 3] = X
    Pi = P.reshape(n, 3, 9)

    if elim.fix_scale:
        SP = np.zeros(9)
        s0 = 1.0
        t0 = -(elim.V @ elim.origins.reshape(-1))
    else:
        SP = elim.S @ P
        s0 = 0.0
        t0 = np.zeros(3)
    VP = elim.V @ P

    H = Pi - c[:, :, None] * SP[None, None, :] + VP[None, :, :]     # (n, 3, 9)
    h = t0[None, :] - s0 * c                                        # (n, 3)
    proj = z[:, :, None] * z[:, None, :] - np.eye(3)[None, :, :]
    G = np.einsum("iab,ibc->iac", proj, H)
    g = np.einsum("iab,ib->ia", proj, h)

    Ghat = np.einsum("iab,iac->bc", G, G)                           # (9, 9)
    Q = MR.T @ Ghat @ MR
    if elim.fix_scale:
        gvec = np.einsum("iab,ia->b", G, g)                         # (9,)
        c0 = float(np.sum(g * g))
        cross = np.outer(MR.T @ gvec, SQ_NORM)
        Q = Q + cross + cross.T + c0 * np.outer(SQ_NORM, SQ_NORM)
    return QuarticCost(Q)
