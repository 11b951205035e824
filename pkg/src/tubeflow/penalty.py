"""Penalty functionals on embeddings and their discrete L2 gradients.

A penalty is evaluated on a manifold (``P(manifold)``) and, for gradients
and flows, on raw sample arrays over the manifold's grid
(``P.sample_value(X, manifold)``, with optional leading batch axes on
``X``). The discrete gradient at a node is the finite-difference derivative
of the sample functional with respect to that node's ambient position,
divided by the node's quadrature weight ``sqrt(det g) * du``: the Riesz
representative of ``dP`` for the weighted l2 pairing that approximates
the L2 pairing over the embedded manifold.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetric, EmptyCloud, NotBijective, SpecError

TIE_RTOL = 1e-12
DEFECT_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# data clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataCloud:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise EmptyCloud("data cloud has no points")
        w = np.ones(len(pts)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (len(pts),):
            raise SpecError("one weight per cloud point is required")
        if not np.all(w > 0):
            raise SpecError("cloud weights must be positive")
        if not np.all(np.isfinite(pts)):
            raise SpecError("cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points, weights=None):
        return cls(points, weights)

    @property
    def dim(self):
        return self.points.shape[1]


def load_cloud(path, N=None):
    """Read a cloud CSV with a header row.

    Columns are the N coordinates plus an optional trailing ``weight`` (or
    ``w``) column.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SpecError(f"cannot read cloud {path}: {exc}") from exc
    if not rows:
        raise EmptyCloud(f"cloud file {path} is empty")
    header = [h.strip().lower() for h in rows[0]]
    if any(_is_number(h) for h in header):
        raise SpecError("cloud CSV needs a header row")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise SpecError(f"non-numeric entry in cloud {path}: {exc}") from exc
    if data.size == 0:
        raise EmptyCloud(f"cloud file {path} has no data rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise SpecError("cloud rows do not match the header")
    weights = None
    if header[-1] in ("weight", "weights", "w"):
        weights, data = data[:, -1], data[:, :-1]
    if N is not None and data.shape[1] != N:
        raise SpecError(f"cloud has {data.shape[1]} coordinates, manifold has {N}")
    return DataCloud(data, weights)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def area_element(J):
    """``sqrt(det(J^T J))`` over the trailing ``(N, k)`` axes."""
    g = np.swapaxes(J, -1, -2) @ J
    det = np.linalg.det(g)
    if np.any(det < 0) or not np.all(np.isfinite(det)):
        raise DegenerateMetric("first fundamental form is not positive semi-definite")
    return np.sqrt(det)


def node_weights(manifold, J=None):
    """Quadrature weight per node, ``sqrt(det g) * parameter weight``; shape ``grid``."""
    J = manifold.grid_jacobian() if J is None else J
    return area_element(J) * manifold.quadrature_weights()


# ---------------------------------------------------------------------------
# penalties
# ---------------------------------------------------------------------------

class Penalty:
    """Base class: ``P(manifold)`` plus the sample functional used for gradients."""

    name = "penalty"
    invariant = True

    def __call__(self, manifold):
        return float(self.sample_value(manifold.samples(), manifold))

    def sample_value(self, X, manifold):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.name}

    def __add__(self, other):
        return WeightedPenalty([(1.0, self), (1.0, other)])

    def __rmul__(self, c):
        return WeightedPenalty([(float(c), self)])


class VolumePenalty(Penalty):
    """k-dimensional volume by tensor-product quadrature of ``sqrt(det g)``.

    On manifolds with a closed-form chart the grid Jacobian is analytic; the
    sample functional differentiates the samples on the grid instead.
    """

    name = "volume"

    def __call__(self, manifold):
        return float(np.sum(node_weights(manifold)))

    def sample_value(self, X, manifold):
        J = manifold.sample_jacobian(X)
        w = manifold.quadrature_weights()
        return np.sum(area_element(J) * w, axis=tuple(range(-manifold.k, 0)))

    def discrete_gradient(self, manifold):
        """Exact gradient of :meth:`sample_value`, weighted like :func:`l2_gradient`.

        Uses ``d sqrt(det g) / dJ = sqrt(det g) J g^-1`` and the transposed grid
        difference matrices; no finite differences in the ambient samples.
        """
        n, N, k = manifold.n_points, manifold.N, manifold.k
        X = manifold.samples().reshape(n, N)
        J = manifold.sample_jacobian(manifold.samples()).reshape(n, N, k)
        g = np.swapaxes(J, -1, -2) @ J
        A = area_element(J)
        P = (manifold.quadrature_weights().reshape(n) * A)[:, None, None] * (J @ np.linalg.inv(g))
        D = manifold.difference_matrices()
        G = sum(D[a].T @ P[:, :, a] for a in range(k))
        Z = G / node_weights(manifold).reshape(n, 1)
        return gradient_field(Z.reshape(manifold.grid + (N,)), manifold)


@dataclass(frozen=True)
class DistanceResult:
    value: float
    nearest: np.ndarray
    tie_points: np.ndarray


class DistancePenalty(Penalty):
    """Weighted sum over cloud points of the squared distance to the nearest grid sample.

    Nearest-sample ties (within relative 1e-12) resolve to the lowest flat
    grid index; tied cloud points are reported by :meth:`evaluate`.
    """

    name = "distance"

    def __init__(self, cloud):
        if not isinstance(cloud, DataCloud):
            cloud = DataCloud(cloud, None)
        self.cloud = cloud

    def _sqdist(self, X):
        # (..., n, N) against (C, N) -> (..., C, n)
        Y = self.cloud.points
        return (np.sum(X * X, axis=-1)[..., None, :] - 2 * np.einsum("...nd,cd->...cn", X, Y)
                + np.sum(Y * Y, axis=-1)[:, None])

    def _check(self, X, manifold):
        if X.shape[-1] != self.cloud.dim:
            raise SpecError(f"cloud dimension {self.cloud.dim} does not match ambient dimension {X.shape[-1]}")

    def evaluate(self, manifold):
        X = manifold.samples().reshape(-1, manifold.N)
        self._check(X, manifold)
        d2 = np.sum((X[None, :, :] - self.cloud.points[:, None, :]) ** 2, axis=-1)
        m = d2.min(axis=1)
        close = d2 <= m[:, None] * (1 + TIE_RTOL) + 1e-300
        # argmax of a boolean row is its first True: the lowest tied grid index
        nearest = close.argmax(axis=1)
        tied = close.sum(axis=1) > 1
        return DistanceResult(value=float(np.sum(self.cloud.weights * m)), nearest=nearest,
                              tie_points=np.flatnonzero(tied))

    def __call__(self, manifold):
        return self.evaluate(manifold).value

    def sample_value(self, X, manifold):
        self._check(X, manifold)
        flat = X.reshape(X.shape[:X.ndim - 1 - manifold.k] + (-1, manifold.N))
        d2 = np.maximum(self._sqdist(flat), 0.0)
        return np.sum(self.cloud.weights * d2.min(axis=-1), axis=-1)

    def describe(self):
        return {"kind": self.name, "cloud_points": int(len(self.cloud.points))}


class PinnedCoordinate(Penalty):
    """``P(phi) = phi^axis(u_node)``: a deliberately reparametrization-dependent probe."""

    name = "pinned"
    invariant = False

    def __init__(self, node=None, axis=0):
        self.node = node
        self.axis = int(axis)

    def node_index(self, manifold):
        if self.node is None:
            # an eighth of the way along each axis: off every symmetry axis of the fixtures
            return tuple(n // 8 for n in manifold.grid)
        return tuple(np.atleast_1d(self.node))

    def sample_value(self, X, manifold):
        idx = self.node_index(manifold)
        return np.array(X[(Ellipsis,) + idx + (self.axis,)], dtype=float)

    def describe(self):
        return {"kind": self.name, "node": self.node, "axis": self.axis}


class ConstantPenalty(Penalty):
    name = "constant"

    def __init__(self, value=0.0):
        self.value = float(value)

    def sample_value(self, X, manifold):
        return np.full(X.shape[:X.ndim - 1 - manifold.k], self.value)


class WeightedPenalty(Penalty):
    """Nonnegative combination ``sum c_i P_i``."""

    name = "combination"

    def __init__(self, terms):
        terms = [(float(c), p) for c, p in terms]
        if any(c < 0 for c, _ in terms):
            raise SpecError("penalty combination coefficients must be nonnegative")
        self.terms = terms
        self.invariant = all(p.invariant for c, p in terms if c > 0)

    def __call__(self, manifold):
        return float(sum(c * p(manifold) for c, p in self.terms))

    def sample_value(self, X, manifold):
        return sum(c * p.sample_value(X, manifold) for c, p in self.terms)

    def describe(self):
        return {"kind": self.name, "terms": [{"coef": c, **p.describe()} for c, p in self.terms]}


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientField:
    Z: np.ndarray
    tangential: np.ndarray
    normal: np.ndarray

    @property
    def tangential_norm(self):
        return np.linalg.norm(self.tangential, axis=-1)

    @property
    def normal_norm(self):
        return np.linalg.norm(self.normal, axis=-1)

    def to_rows(self, manifold):
        U = manifold.flat_params()
        Z = self.Z.reshape(len(U), -1)
        return np.column_stack([U, Z, self.tangential_norm.reshape(-1), self.normal_norm.reshape(-1)])


def decompose(Z, J):
    """Split ``Z`` into its projection on span(J) and the orthogonal rest."""
    Q, _ = np.linalg.qr(J)
    Zt = np.einsum("...nk,...k->...n", Q, np.einsum("...nk,...n->...k", Q, Z))
    return Zt, Z - Zt


def gradient_field(Z, manifold):
    Z = np.asarray(Z, dtype=float)
    Zt, Zn = decompose(Z, manifold.grid_jacobian())
    return GradientField(Z=Z, tangential=Zt, normal=Zn)


def l2_gradient(penalty, manifold, rel_step=1e-5, chunk=None):
    """Discrete L2 gradient of ``penalty`` at every grid node.

    Each node is moved by ``+-eps`` along each ambient axis
    (``eps = rel_step * scale``) and the central difference of the sample
    functional is divided by the node's quadrature weight.
    """
    X = manifold.samples()
    grid, N = manifold.grid, manifold.N
    n = manifold.n_points
    eps = rel_step * manifold.scale
    w = node_weights(manifold).reshape(-1)
    flat = X.reshape(n, N)
    if chunk is None:
        chunk = max(1, min(n, 2_000_000 // max(1, n * N)))
    G = np.zeros((n, N))
    for a in range(N):
        for start in range(0, n, chunk):
            idx = np.arange(start, min(n, start + chunk))
            B = np.broadcast_to(flat, (len(idx), n, N)).copy()
            B[np.arange(len(idx)), idx, a] += eps
            # copy: a sample functional may return a view into B
            fp = np.array(penalty.sample_value(B.reshape((len(idx),) + grid + (N,)), manifold), dtype=float)
            B[np.arange(len(idx)), idx, a] -= 2 * eps
            fm = penalty.sample_value(B.reshape((len(idx),) + grid + (N,)), manifold)
            G[idx, a] = (fp - fm) / (2 * eps)
    Z = (G / w[:, None]).reshape(grid + (N,))
    return gradient_field(Z, manifold)


def normality_defect(field, manifold=None, floor=DEFECT_FLOOR):
    """Max over nodes of ``|Z_tangential| / max(|Z|, floor)``, in [0, 1]."""
    if manifold is not None and not isinstance(field, GradientField):
        field = gradient_field(field, manifold)
    ratio = field.tangential_norm / np.maximum(np.linalg.norm(field.Z, axis=-1), floor)
    return float(np.clip(ratio, 0.0, 1.0).max())


def pairing(field, X, manifold):
    """Quadrature L2 pairing ``sum_m w_m Z_m . X_m``."""
    w = node_weights(manifold)
    return float(np.sum(w * np.sum(field.Z * X, axis=-1)))


# ---------------------------------------------------------------------------
# parameter-domain diffeomorphisms
# ---------------------------------------------------------------------------

class PhaseShift:
    """``u -> u + s`` on periodic axes (non-periodic entries of ``s`` must be 0)."""

    def __init__(self, shift):
        self.shift = np.atleast_1d(np.asarray(shift, dtype=float))

    def check(self, manifold):
        s = np.broadcast_to(self.shift, (manifold.k,))
        if np.any((s != 0) & ~manifold.periodic):
            raise NotBijective("phase shifts only act on periodic axes")

    def __call__(self, U):
        return U + self.shift

    def jacobian(self, U):
        k = U.shape[-1]
        return np.broadcast_to(np.eye(k), U.shape[:-1] + (k, k))

    def hessian(self, U):
        k = U.shape[-1]
        return np.zeros(U.shape[:-1] + (k, k, k))


class Warp:
    """Smooth warp of one axis, ``u -> u + a * (P / (c pi)) * sin(c pi (u - lo) / P)``.

    ``c = 2`` on periodic axes (period ``P``) and ``c = 1`` on non-periodic
    axes (length ``P``), so endpoints stay fixed. Bijective iff ``|a| < 1``.
    """

    def __init__(self, a, axis=0):
        self.a = float(a)
        self.axis = int(axis)
        self._lo = self._P = self._c = None

    def check(self, manifold):
        if not abs(self.a) < 1:
            raise NotBijective(f"warp amplitude |a| = {abs(self.a)} must be < 1")
        if not 0 <= self.axis < manifold.k:
            raise SpecError("warp axis out of range")
        self._lo = manifold.bounds[self.axis, 0]
        self._P = manifold.lengths[self.axis]
        self._c = 2.0 if manifold.periodic[self.axis] else 1.0

    def _phase(self, U):
        if self._P is None:
            raise RuntimeError("warp must be bound to a manifold with check() first")
        w = self._c * np.pi / self._P
        return w, w * (U[..., self.axis] - self._lo)

    def __call__(self, U):
        w, th = self._phase(U)
        out = np.array(U, dtype=float, copy=True)
        out[..., self.axis] += self.a * np.sin(th) / w
        return out

    def jacobian(self, U):
        k = U.shape[-1]
        _, th = self._phase(U)
        D = np.broadcast_to(np.eye(k), U.shape[:-1] + (k, k)).copy()
        D[..., self.axis, self.axis] = 1 + self.a * np.cos(th)
        return D

    def hessian(self, U):
        k = U.shape[-1]
        w, th = self._phase(U)
        H = np.zeros(U.shape[:-1] + (k, k, k))
        H[..., self.axis, self.axis, self.axis] = -self.a * w * np.sin(th)
        return H


def reparametrization_invariance(penalty, manifold, diffeo):
    """``|P(phi o alpha) - P(phi)|`` at equal grid resolution."""
    return abs(penalty(manifold.reparametrize(diffeo)) - penalty(manifold))
