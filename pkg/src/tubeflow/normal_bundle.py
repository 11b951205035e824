"""Normal frames, the endpoint map E(q, r) = phi(q) + sum r^i w_i(q) and its Jacobian.

Frames are built per point by Gram-Schmidt on the ambient standard basis
projected off the tangent space, then aligned to a neighbouring frame by the
closest orthogonal change of basis. Frame derivatives are central differences
over a local stencil whose frames are all aligned to the stencil centre, so
they stay meaningful even when no global smooth frame exists.

Which quantities depend on the frame: ``det DE`` and focal distances are
frame-invariant up to sign; the entrywise norms of ``DE^{-1}`` used by the
tube constants are invariant under sign flips of frame vectors (the only
freedom in codimension one) but only covariant under rotations of the frame
in higher codimension.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .manifold import RANK_TOL, _as_points, fd_along_axes, fundamental_forms


@dataclass(frozen=True)
class NormalFrame:
    base_u: np.ndarray
    W: np.ndarray

    @property
    def codim(self):
        return self.W.shape[-1]


def _check_rank(J):
    s = np.linalg.svd(J, compute_uv=False)
    bad = s[..., -1] <= RANK_TOL * s[..., 0]
    if np.any(bad):
        raise RankDeficient("tangent space is degenerate")


def raw_frames(J):
    """Pivoted Gram-Schmidt of the standard basis projected off span(J).

    ``J`` has shape ``(..., N, k)``; returns ``(..., N, N - k)``. At each step
    the remaining projected basis vector of largest norm is taken, lowest
    index on ties.
    """
    N, k = J.shape[-2:]
    Q, _ = np.linalg.qr(J)
    B = np.eye(N) - Q @ np.swapaxes(Q, -1, -2)
    cols = []
    for _ in range(N - k):
        norms = np.linalg.norm(B, axis=-2)
        j = np.argmax(norms, axis=-1)
        w = np.take_along_axis(B, j[..., None, None], axis=-1)[..., 0]
        w = w / np.linalg.norm(w, axis=-1, keepdims=True)
        cols.append(w)
        B = B - w[..., :, None] * np.einsum("...n,...nm->...m", w, B)[..., None, :]
    return np.stack(cols, axis=-1)


def align(W, A):
    """Rotate/reflect the columns of ``W`` to best match ``A`` (orthogonal Procrustes)."""
    M = np.swapaxes(W, -1, -2) @ A
    if M.shape[-1] == 1:
        s = np.where(M[..., 0, 0] < 0, -1.0, 1.0)
        return W * s[..., None, None]
    u, _, vt = np.linalg.svd(M)
    return W @ (u @ vt)


def normal_frame(manifold, u, anchor=None):
    """Orthonormal basis of the normal space at ``u``, optionally aligned to ``anchor``."""
    u = _as_points(u, manifold.k)
    J = manifold.jacobian(u)
    _check_rank(J)
    W = raw_frames(J)
    if anchor is not None:
        A = anchor.W if isinstance(anchor, NormalFrame) else np.asarray(anchor, dtype=float)
        W = align(W, A)
    return NormalFrame(base_u=u, W=W)


def _sweep_anchor(index, grid):
    """Anchor of a grid multi-index: step back along the last axis with a nonzero index."""
    for a in range(len(grid) - 1, -1, -1):
        if index[a] > 0:
            prev = list(index)
            prev[a] -= 1
            return tuple(prev)
    return None


class FrameField:
    """One normal frame per grid node, aligned along a deterministic sweep.

    Node ``(i, ..., j)`` is aligned to the node obtained by decrementing its
    last nonzero index, so every row follows its predecessor and every row
    start follows the previous row start.
    """

    def __init__(self, manifold):
        self.manifold = manifold
        J = manifold.grid_jacobian()
        _check_rank(J)
        raw = raw_frames(J)
        grid = manifold.grid
        W = raw.copy()
        if raw.shape[-1] == 1:
            sign = np.ones(grid)
            w = raw[..., 0]
            for idx in np.ndindex(*grid):
                prev = _sweep_anchor(idx, grid)
                if prev is not None and np.dot(w[idx], w[prev]) * sign[prev] < 0:
                    sign[idx] = -1.0
            W = raw * sign[..., None, None]
        else:
            for idx in np.ndindex(*grid):
                prev = _sweep_anchor(idx, grid)
                if prev is not None:
                    W[idx] = align(raw[idx], W[prev])
        self.W = W

    @property
    def codim(self):
        return self.W.shape[-1]

    def __getitem__(self, idx):
        idx = tuple(np.atleast_1d(idx))
        return NormalFrame(base_u=self.manifold.grid_params()[idx], W=self.W[idx])

    def nearest_index(self, U):
        """Grid multi-index of the node nearest to each parameter point."""
        m = self.manifold
        U = m.wrap(U)
        idx = []
        for a in range(m.k):
            x = m.axis_nodes(a)
            if m.periodic[a]:
                i = np.rint((U[..., a] - x[0]) / m.spacing[a]).astype(int) % m.grid[a]
            else:
                i = np.clip(np.rint((U[..., a] - x[0]) / m.spacing[a]).astype(int), 0, m.grid[a] - 1)
            idx.append(i)
        return tuple(idx)

    def frames_at(self, U):
        """Frames at arbitrary parameter points, aligned to the nearest grid frame."""
        m = self.manifold
        U = m.wrap(U)
        J = m.jacobian(U)
        _check_rank(J)
        return align(raw_frames(J), self.W[self.nearest_index(U)])

    def continuity_constant(self):
        """Max over adjacent node pairs of ``||W_a - W_b|| / spacing``."""
        m = self.manifold
        C = 0.0
        for a in range(m.k):
            if m.periodic[a]:
                nxt = np.roll(self.W, -1, axis=a)
                diff = nxt - self.W
            else:
                diff = np.diff(self.W, axis=a)
            if diff.size:
                C = max(C, float(np.linalg.norm(diff, axis=(-2, -1)).max() / m.spacing[a]))
        return C

    def to_rows(self):
        """Flat table rows ``(u..., W entries column-major)`` for export."""
        U = self.manifold.flat_params()
        W = self.W.reshape(len(U), -1)
        return np.concatenate([U, W], axis=1)


@dataclass(frozen=True)
class FrameJet:
    """Aligned frame with first and second parameter derivatives at a batch of points.

    Shapes: ``W (..., N, c)``, ``dW (..., N, c, k)``, ``d2W (..., N, c, k, k)``.
    """

    U: np.ndarray
    phi: np.ndarray
    J: np.ndarray
    H: np.ndarray
    W: np.ndarray
    dW: np.ndarray
    d2W: np.ndarray


def frame_jet(manifold, U, W0, second=True, h=None):
    """Frame derivatives at ``U`` from stencils aligned to the centre frames ``W0``.

    The step defaults to the grid spacing along each axis. First derivatives
    are Richardson-extrapolated; second derivatives only feed remainder
    bounds and use plain nested central differences.
    """
    U = manifold.wrap(U)
    h = manifold.spacing if h is None else h
    bounds = manifold.stencil_bounds
    per = manifold.periodic

    def aligned(V):
        return align(raw_frames(manifold.jacobian(V)), W0)

    h = np.asarray(h, dtype=float)
    # one Richardson step on top of the grid-spacing stencil lifts the
    # truncation error from O(h^2) to O(h^4)
    dW = (4 * fd_along_axes(aligned, U, h / 2, bounds, per) - fd_along_axes(aligned, U, h, bounds, per)) / 3
    if second:
        d2W = fd_along_axes(lambda V: fd_along_axes(aligned, V, h, bounds, per), U, h, bounds, per)
        d2W = 0.5 * (d2W + np.swapaxes(d2W, -1, -2))
        H = manifold.hessian(U)
    else:
        d2W = H = None
    return FrameJet(U=U, phi=manifold.evaluate(U), J=manifold.jacobian(U), H=H, W=W0, dW=dW, d2W=d2W)


def _scales(k, scales):
    return np.ones(k) if scales is None else np.asarray(scales, dtype=float)


def de_from_jet(jet, r, scales=None):
    """``DE`` at ``(U, r)``: tangent columns ``(J_j + r^i dW_i/du^j)/L_j``, then ``W``.

    ``scales`` ``L`` switches to length-normalized coordinates ``q^j = L_j u^j``.
    ``r`` broadcasts against the jet's batch shape with trailing size ``c``.
    """
    L = _scales(jet.J.shape[-1], scales)
    r = np.asarray(r, dtype=float)
    T = jet.J + np.einsum("...nck,...c->...nk", jet.dW, r)
    T = T / L
    W = np.broadcast_to(jet.W, T.shape[:-1] + (jet.W.shape[-1],))
    return np.concatenate([T, W], axis=-1)


def endpoint_map_E(manifold, u, r, frame=None):
    """``phi(u) + W(u) r``."""
    u = _as_points(u, manifold.k)
    if frame is None:
        frame = normal_frame(manifold, u)
    W = frame.W if isinstance(frame, NormalFrame) else np.asarray(frame, dtype=float)
    return manifold.evaluate(u) + np.einsum("...nc,...c->...n", W, np.asarray(r, dtype=float))


def endpoint_jacobian_DE(manifold, u, r, frame=None, scales=None):
    """``N x N`` Jacobian of the endpoint map at ``(u, r)``.

    ``frame`` fixes the normal basis at ``u`` (a :class:`NormalFrame`, a
    matrix, or ``None`` for the unanchored frame).
    """
    u = _as_points(u, manifold.k)
    if frame is None:
        frame = normal_frame(manifold, u)
    W0 = frame.W if isinstance(frame, NormalFrame) else np.asarray(frame, dtype=float)
    jet = frame_jet(manifold, u, W0, second=False)
    return de_from_jet(jet, r, scales)


def focal_distance(manifold, u, v):
    """Distance to the first focal point along ``phi(u) + t v``, ``t > 0``; inf if none."""
    p = fundamental_forms(manifold, u, v).principal_curvatures
    pos = p[p > 1e-12]
    return float(1.0 / pos.max()) if pos.size else float("inf")
