"""Parametrized compact embedded submanifolds of R^N.

A :class:`ChartedManifold` wraps a vectorized embedding ``phi: U -> R^N``
defined on a box of parameters, some axes of which are periodic, together
with a sampling grid. Derivatives are analytic when the caller supplies them
and central finite differences otherwise.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse
from scipy.spatial import cKDTree

from .errors import DegenerateMetric, NotNormal, OutOfDomain, RankDeficient, StencilOutOfDomain

RANK_TOL = 1e-10


def _as_points(U, k):
    U = np.asarray(U, dtype=float)
    if k == 1 and (U.ndim == 0 or U.shape[-1] != 1):
        U = U[..., None]
    if U.shape[-1] != k:
        raise ValueError(f"parameter points must have {k} coordinates, got shape {U.shape}")
    return U


class ChartedManifold:
    """A k-dimensional parametrized manifold in R^N sampled on a tensor grid.

    Parameters
    ----------
    func : callable
        Vectorized embedding, ``(..., k) -> (..., N)``.
    k, N : int
        Intrinsic and ambient dimension.
    bounds : sequence of (lo, hi)
        Parameter box, one interval per axis.
    periodic : sequence of bool
        Periodic axes wrap with period ``hi - lo``.
    grid : sequence of int
        Sample count per axis.
    jac, hess : callable, optional
        Analytic ``(..., N, k)`` Jacobian and ``(..., N, k, k)`` Hessian.
    placement : sequence of str, optional
        Node placement for non-periodic axes: ``"endpoints"`` (default,
        trapezoid weights) or ``"midpoint"`` (cell centres, midpoint weights).
    """

    sampled = False

    def __init__(self, func, *, k, N, bounds, periodic, grid, jac=None, hess=None,
                 placement=None, family="custom", params=None, validate=True,
                 reference_speed=None, scale=None, closure=None):
        if N <= k:
            raise ValueError("ambient dimension must exceed intrinsic dimension")
        self.k = int(k)
        self.N = int(N)
        self.bounds = np.asarray(bounds, dtype=float).reshape(self.k, 2)
        if np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ValueError("each parameter interval must have hi > lo")
        self.periodic = np.asarray(periodic, dtype=bool).reshape(self.k)
        if np.isscalar(grid):
            grid = (grid,)
        self.grid = tuple(int(n) for n in grid)
        if len(self.grid) != self.k or min(self.grid) < 1:
            raise ValueError("grid must hold one positive sample count per axis")
        if placement is None:
            placement = ["endpoints"] * self.k
        self.placement = tuple("periodic" if p else pl for p, pl in zip(self.periodic, placement))
        for pl in self.placement:
            if pl not in ("periodic", "endpoints", "midpoint"):
                raise ValueError(f"unknown node placement {pl!r}")
        self._func = func
        self._jac = jac
        self._hess = hess
        self.family = family
        self.params = dict(params or {})
        self._reference_speed = reference_speed
        self._scale = scale
        self._closure = closure
        if validate:
            self.validate()

    # -- grid -----------------------------------------------------------------

    @property
    def deriv_order(self):
        if self._jac is None:
            return 0
        return 2 if self._hess is not None else 1

    @property
    def lengths(self):
        return self.bounds[:, 1] - self.bounds[:, 0]

    @property
    def periods(self):
        """Period per axis, 0 for non-periodic axes."""
        return np.where(self.periodic, self.lengths, 0.0)

    @property
    def spacing(self):
        h = np.empty(self.k)
        for i, (n, pl, L) in enumerate(zip(self.grid, self.placement, self.lengths)):
            h[i] = L / (n - 1) if pl == "endpoints" and n > 1 else L / n
        return h

    @property
    def stencil_bounds(self):
        """Box that difference stencils may touch.

        Midpoint axes stop at the outermost nodes so stencils never reach a
        degenerate chart edge such as a sphere pole.
        """
        b = self.bounds.copy()
        for i, pl in enumerate(self.placement):
            if pl == "midpoint":
                x = self.axis_nodes(i)
                b[i] = (x[0], x[-1])
        return b

    @property
    def fd_step(self):
        return float(self.spacing.min()) / 4.0

    @property
    def n_points(self):
        return int(np.prod(self.grid))

    def axis_nodes(self, i):
        lo, hi = self.bounds[i]
        n = self.grid[i]
        pl = self.placement[i]
        if pl == "periodic":
            return lo + (hi - lo) * np.arange(n) / n
        if pl == "midpoint":
            return lo + (hi - lo) * (np.arange(n) + 0.5) / n
        return np.linspace(lo, hi, n)

    def axis_weights(self, i):
        n = self.grid[i]
        h = self.spacing[i]
        w = np.full(n, h)
        if self.placement[i] == "endpoints" and n > 1:
            w[0] = w[-1] = h / 2
        return w

    def grid_params(self):
        """Parameter nodes, shape ``(*grid, k)``."""
        axes = [self.axis_nodes(i) for i in range(self.k)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def flat_params(self):
        return self.grid_params().reshape(-1, self.k)

    def quadrature_weights(self):
        """Tensor-product parameter weights, shape ``grid``."""
        w = self.axis_weights(0)
        for i in range(1, self.k):
            w = np.multiply.outer(w, self.axis_weights(i))
        return w

    def domain_diameter(self):
        """Diameter of the parameter box in the periodic metric."""
        d = np.where(self.periodic, self.lengths / 2, self.lengths)
        return float(np.sqrt(np.sum(d * d)))

    def with_grid(self, grid):
        return self._clone(grid=grid)

    def _clone(self, **overrides):
        kw = dict(k=self.k, N=self.N, bounds=self.bounds, periodic=self.periodic, grid=self.grid,
                  jac=self._jac, hess=self._hess, placement=self.placement, family=self.family,
                  params=self.params, validate=False, reference_speed=None, scale=None)
        func = overrides.pop("func", self._func)
        kw.update(overrides)
        return ChartedManifold(func, **kw)

    # -- evaluation ------------------------------------------------------------

    def wrap(self, U):
        """Wrap periodic coordinates; reject non-periodic ones outside the box."""
        U = _as_points(U, self.k).copy()
        lo, L = self.bounds[:, 0], self.lengths
        U = np.where(self.periodic, lo + np.mod(U - lo, L), U)
        tol = 1e-12 * L
        bad = (~self.periodic) & ((U < self.bounds[:, 0] - tol) | (U > self.bounds[:, 1] + tol))
        if np.any(bad):
            raise OutOfDomain(f"parameter point outside the domain box {self.bounds.tolist()}")
        return U

    def evaluate(self, U):
        return np.asarray(self._func(self.wrap(U)), dtype=float)

    def jacobian(self, U):
        U = self.wrap(U)
        if self._jac is not None:
            return np.asarray(self._jac(U), dtype=float)
        return self._fd(self._func, U)

    def hessian(self, U):
        U = self.wrap(U)
        if self._hess is not None:
            return np.asarray(self._hess(U), dtype=float)
        if self._jac is not None:
            H = self._fd(self._jac, U)
        else:
            H = self._fd(lambda V: self._fd(self._func, V), U)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def _fd(self, f, U, h=None):
        """Central differences of ``f`` along every axis, stacked last."""
        h = self.fd_step if h is None else h
        return fd_along_axes(f, U, h, self.stencil_bounds, self.periodic)

    # -- grid quantities ---------------------------------------------------------

    def samples(self):
        """Ambient points on the grid, shape ``(*grid, N)``."""
        if not hasattr(self, "_samples_cache"):
            self._samples_cache = self.evaluate(self.grid_params())
        return self._samples_cache

    def grid_jacobian(self):
        """Jacobian at grid nodes, shape ``(*grid, N, k)``."""
        if not hasattr(self, "_gridjac_cache"):
            self._gridjac_cache = self.jacobian(self.grid_params())
        return self._gridjac_cache

    def grid_hessian(self):
        if not hasattr(self, "_gridhess_cache"):
            self._gridhess_cache = self.hessian(self.grid_params())
        return self._gridhess_cache

    @property
    def scale(self):
        """Ambient bounding-box diagonal of the samples."""
        if self._scale is None:
            X = self.samples().reshape(-1, self.N)
            self._scale = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
        return self._scale

    @property
    def reference_speed(self):
        """Median largest singular value of the grid Jacobian (immersion floor)."""
        if self._reference_speed is None:
            s = np.linalg.svd(self.grid_jacobian().reshape(-1, self.N, self.k), compute_uv=False)
            self._reference_speed = float(np.median(s[:, 0]))
        return self._reference_speed

    def sample_jacobian(self, X):
        """Grid-difference Jacobian of arbitrary sample arrays on this grid."""
        nodes = [self.axis_nodes(a) for a in range(self.k)]
        return sample_jacobian(X, self.k, self.spacing, self.periodic, self.placement, nodes,
                               closure=self.closure_maps())

    def difference_matrices(self, chunk=512):
        """Sparse per-axis matrices ``D_a`` with ``sample_jacobian(X)[..., a] == D_a @ X``.

        ``X`` is flattened over the grid. Built by probing the (linear)
        difference operator with unit node vectors.
        """
        if not hasattr(self, "_diffmat_cache"):
            n = self.n_points
            cols = [[] for _ in range(self.k)]
            for s in range(0, n, chunk):
                m = min(chunk, n - s)
                E = np.zeros((m, n))
                E[np.arange(m), s + np.arange(m)] = 1.0
                D = self.sample_jacobian(E.reshape((m,) + self.grid + (1,)))
                for a in range(self.k):
                    cols[a].append(sparse.csc_matrix(D[..., 0, a].reshape(m, n).T))
            self._diffmat_cache = [sparse.hstack(c).tocsr() for c in cols]
        return self._diffmat_cache

    def closure_maps(self):
        """Ghost-node maps for midpoint axes whose chart folds back past an end.

        Per axis a pair ``(lo, hi)``. Each entry is either ``None`` or, for
        every node of that boundary slab, the flat slab index of the node
        coinciding with its mirror image across the end. A polar chart closes
        this way at its poles, so grid differences there can stay central.
        """
        if self._closure is None:
            self._closure = tuple((self._detect_closure(a, 0), self._detect_closure(a, 1))
                                  if self.placement[a] == "midpoint" else (None, None)
                                  for a in range(self.k))
        return self._closure

    def _detect_closure(self, a, end):
        idx = 0 if end == 0 else -1
        slab = np.take(self.grid_params(), idx, axis=a)
        mirror = slab.copy()
        mirror[..., a] = 2 * self.bounds[a, end] - slab[..., a]
        G = np.asarray(self._func(mirror), dtype=float).reshape(-1, self.N)
        if not np.all(np.isfinite(G)):
            return None
        X = np.take(self.samples(), idx, axis=a).reshape(-1, self.N)
        d, j = cKDTree(X).query(G)
        if d.max() > 1e-9 * max(self.scale, 1e-300):
            return None
        return j

    def chart_scales(self):
        """Mean ambient speed along each parameter axis over the grid."""
        J = self.grid_jacobian().reshape(-1, self.N, self.k)
        return np.linalg.norm(J, axis=1).mean(axis=0)

    def validate(self):
        J = self.grid_jacobian().reshape(-1, self.N, self.k)
        if not np.all(np.isfinite(J)):
            raise RankDeficient("non-finite Jacobian on the grid")
        s = np.linalg.svd(J, compute_uv=False)
        bad = s[:, -1] <= RANK_TOL * s[:, 0]
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise RankDeficient(f"Jacobian rank < {self.k} at grid point {self.flat_params()[i].tolist()}")
        X = self.samples()
        if X.shape[-1] != self.N:
            raise ValueError(f"embedding returned {X.shape[-1]} coordinates, expected {self.N}")

    # -- derived manifolds ---------------------------------------------------------

    def rigid_motion(self, Q, b=None):
        """Compose with the ambient map ``x -> Q x + b``."""
        return self.affine(np.asarray(Q, dtype=float), np.zeros(self.N) if b is None else b)

    def dilate(self, s):
        return self.affine(float(s) * np.eye(self.N), np.zeros(self.N))

    def affine(self, A, b):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        f, j, h = self._func, self._jac, self._hess
        jac = None if j is None else (lambda U: np.einsum("ab,...bk->...ak", A, j(U)))
        hess = None if h is None else (lambda U: np.einsum("ab,...bkl->...akl", A, h(U)))
        return self._clone(func=lambda U: f(U) @ A.T + b, jac=jac, hess=hess, validate=True)

    def reparametrize(self, diffeo):
        """Return ``phi o alpha`` for a parameter-domain self-map ``alpha``."""
        diffeo.check(self)
        f, j, h = self._func, self._jac, self._hess

        def func(U):
            return f(diffeo(U))

        jac = hess = None
        if j is not None:
            def jac(U):
                return np.einsum("...na,...ai->...ni", j(diffeo(U)), diffeo.jacobian(U))
        if j is not None and h is not None:
            def hess(U):
                A = diffeo(U)
                D = diffeo.jacobian(U)
                D2 = diffeo.hessian(U)
                return (np.einsum("...nab,...ai,...bj->...nij", h(A), D, D)
                        + np.einsum("...na,...aij->...nij", j(A), D2))
        return self._clone(func=func, jac=jac, hess=hess, validate=True)

    def as_sampled(self):
        from .families import sampled

        return sampled(self.samples(), bounds=self.bounds, periodic=self.periodic,
                       placement=self.placement, validate=False,
                       reference_speed=self.reference_speed, scale=self.scale)

    def describe(self):
        return {"family": self.family, "params": self.params, "grid": list(self.grid),
                "ambient_dim": self.N, "intrinsic_dim": self.k}


def fd_along_axes(f, U, h, bounds, periodic):
    """Second-order finite differences of ``f`` along each parameter axis.

    On non-periodic axes the three-point stencil is shifted inward near the
    boundary and the derivative is read off the interpolating parabola, so
    evaluation never leaves the box.
    """
    U = np.asarray(U, dtype=float)
    k = U.shape[-1]
    steps = np.broadcast_to(np.asarray(h, dtype=float), (k,))
    cols = []
    for a in range(k):
        lo, hi = bounds[a]
        h = steps[a]
        e = np.zeros(k)
        e[a] = h
        if periodic[a]:
            d = (np.asarray(f(U + e)) - np.asarray(f(U - e))) / (2 * h)
        else:
            if 2 * h > hi - lo:
                raise StencilOutOfDomain(f"axis {a} is shorter than the difference stencil")
            C = U.copy()
            C[..., a] = np.clip(U[..., a], lo + h, hi - h)
            fp = np.asarray(f(C + e))
            fm = np.asarray(f(C - e))
            f0 = np.asarray(f(C))
            s = U[..., a] - C[..., a]
            s = s.reshape(s.shape + (1,) * (fp.ndim - s.ndim))
            d = (fp - fm) / (2 * h) + s * (fp - 2 * f0 + fm) / (h * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def sample_jacobian(X, k, spacing, periodic, placement, nodes, closure=None):
    """Jacobian of sampled grid values by central differences on the grid.

    ``X`` has shape ``(..., *grid, N)``; the result is ``(..., *grid, N, k)``.
    Periodic axes wrap; other axes use second-order one-sided edges, except at
    ends listed in ``closure`` (see :meth:`ChartedManifold.closure_maps`),
    where the mirrored ghost node keeps the difference central.
    """
    X = np.asarray(X, dtype=float)
    cols = []
    for a in range(k):
        ax = X.ndim - 1 - k + a
        if periodic[a]:
            d = (np.roll(X, -1, axis=ax) - np.roll(X, 1, axis=ax)) / (2 * spacing[a])
        elif placement[a] == "midpoint":
            d = np.gradient(X, nodes[a], axis=ax, edge_order=2)
            if closure is not None and any(m is not None for m in closure[a]):
                d = _close_ends(X, d, ax, closure[a], spacing[a], k)
        else:
            d = np.gradient(X, spacing[a], axis=ax, edge_order=2)
        cols.append(d)
    return np.stack(cols, axis=-1)


def _close_ends(X, d, ax, maps, h, k):
    Y = np.moveaxis(X, ax, -2)
    D = np.moveaxis(d, ax, -2).copy()
    for end, m in enumerate(maps):
        if m is None:
            continue
        i, j = (0, 1) if end == 0 else (-1, -2)
        slab = Y[..., i, :]
        # remaining k - 1 grid axes flattened so the ghost map can index them
        flat = slab.reshape(slab.shape[:slab.ndim - k] + (-1, slab.shape[-1]))
        ghost = flat[..., m, :].reshape(slab.shape)
        sign = 1.0 if end == 0 else -1.0
        D[..., i, :] = sign * (Y[..., j, :] - ghost) / (2 * h)
    return np.moveaxis(D, -2, ax)


# ---------------------------------------------------------------------------
# fundamental forms and curvature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalForms:
    g: np.ndarray
    l: np.ndarray
    principal_curvatures: np.ndarray


def normal_basis(J):
    """Orthonormal basis of the orthogonal complement of the columns of ``J``.

    ``J`` has shape ``(..., N, k)``; the result has shape ``(..., N, N - k)``.
    The basis is only defined up to an orthogonal change; see
    :mod:`tubeflow.normal_bundle` for continuous frames.
    """
    k = J.shape[-1]
    u, _, _ = np.linalg.svd(J, full_matrices=True)
    return u[..., :, k:]


def shape_matrices(J, H, W):
    """Second fundamental form in metric-orthonormal coordinates.

    Returns ``S`` with shape ``(..., c, k, k)``: for each normal basis vector
    ``W[:, a]`` the symmetric matrix ``C^{-1} l_a C^{-T}`` with ``g = C C^T``,
    whose eigenvalues are the principal curvatures along ``W[:, a]``.
    """
    g = np.swapaxes(J, -1, -2) @ J
    try:
        C = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMetric("first fundamental form is not positive definite") from exc
    Cinv = np.linalg.inv(C)
    lmat = np.einsum("...na,...nij->...aij", W, H)
    S = Cinv[..., None, :, :] @ lmat @ np.swapaxes(Cinv, -1, -2)[..., None, :, :]
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _sphere_directions(c, n):
    """Quasi-uniform unit vectors in R^c."""
    if c == 1:
        return np.array([[1.0], [-1.0]])
    if c == 2:
        th = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if c == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(1 - z * z)
        th = np.pi * (1 + 5 ** 0.5) * i
        return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    # low-discrepancy points pushed onto the sphere through the normal quantile
    from scipy.stats import norm, qmc

    pts = norm.ppf(qmc.Halton(d=c, scramble=False).random(n + 1)[1:])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sphere_directions(c, n=64):
    return _sphere_directions(c, n)


def _max_over_normals(S, n_dirs, iters=30):
    """Max over unit normals of the largest principal curvature, per point.

    Returns ``(value, direction)`` with direction coefficients in the normal
    basis used to build ``S``.
    """
    c = S.shape[-3]
    if c == 1:
        ev = np.linalg.eigvalsh(S[..., 0, :, :])
        up, down = ev[..., -1], -ev[..., 0]
        val = np.maximum(up, down)
        d = np.where(up >= down, 1.0, -1.0)[..., None]
        return val, d
    D = _sphere_directions(c, n_dirs)
    Sd = np.einsum("da,...aij->...dij", D, S)
    ev = np.linalg.eigvalsh(Sd)[..., -1]
    best = np.argmax(ev, axis=-1)
    d = D[best]
    # alternating ascent: the top eigenvector fixes the best direction and back
    for _ in range(iters):
        w, V = np.linalg.eigh(np.einsum("...a,...aij->...ij", d, S))
        x = V[..., :, -1]
        q = np.einsum("...i,...aij,...j->...a", x, S, x)
        nq = np.linalg.norm(q, axis=-1, keepdims=True)
        d = np.where(nq > 0, q / np.where(nq > 0, nq, 1.0), d)
    val = np.linalg.eigvalsh(np.einsum("...a,...aij->...ij", d, S))[..., -1]
    return np.maximum(val, ev.max(axis=-1)), d


def pointwise_max_curvature(manifold, U, n_dirs=64):
    """Largest principal curvature over all unit normals at parameter points ``U``."""
    U = _as_points(U, manifold.k)
    J = manifold.jacobian(U)
    H = manifold.hessian(U)
    W = normal_basis(J)
    return _max_over_normals(shape_matrices(J, H, W), n_dirs)[0]


def fundamental_forms(manifold, u, v, tol=1e-8):
    """First and second fundamental forms at ``u`` for the unit normal ``v``."""
    u = _as_points(u, manifold.k)
    v = np.asarray(v, dtype=float)
    J = manifold.jacobian(u)
    H = manifold.hessian(u)
    nv = np.linalg.norm(v)
    if abs(nv - 1.0) > tol:
        raise NotNormal(f"normal vector has length {nv}, expected 1")
    Jn = np.linalg.norm(J)
    if np.max(np.abs(v @ J)) > tol * max(1.0, Jn):
        raise NotNormal("vector is not orthogonal to the tangent space")
    g = J.T @ J
    ev_g = np.linalg.eigvalsh(g)
    if ev_g[0] <= RANK_TOL * max(ev_g[-1], 1e-300):
        raise DegenerateMetric("first fundamental form is numerically singular")
    l = np.einsum("n,nij->ij", v, H)
    l = 0.5 * (l + l.T)
    from scipy.linalg import eigh

    p = eigh(l, g, eigvals_only=True)
    return FundamentalForms(g=g, l=l, principal_curvatures=p)


@dataclass(frozen=True)
class CurvatureSummary:
    K: float
    argmax_u: np.ndarray
    grid_max: float
    per_point: np.ndarray
    refined: bool


def curvature_summary(manifold, n_dirs=64, refine=True, n_candidates=3):
    U = manifold.flat_params()
    J = manifold.grid_jacobian().reshape(-1, manifold.N, manifold.k)
    H = manifold.grid_hessian().reshape(-1, manifold.N, manifold.k, manifold.k)
    W = normal_basis(J)
    kmax, _ = _max_over_normals(shape_matrices(J, H, W), n_dirs)
    grid_max = float(kmax.max())
    best_u = U[int(np.argmax(kmax))]
    K = grid_max
    if refine:
        uK, val = refine_extremum(manifold, lambda V: pointwise_max_curvature(manifold, V, n_dirs),
                                  U, kmax, n_candidates=n_candidates, maximize=True)
        if val > K:
            K, best_u = val, uK
    return CurvatureSummary(K=max(K, 0.0) + 0.0, argmax_u=best_u, grid_max=max(grid_max, 0.0) + 0.0,
                            per_point=kmax, refined=refine)


def max_curvature_K(manifold, n_dirs=64, refine=True):
    """Largest principal curvature over the manifold and over all unit normals.

    Codimension one evaluates both orientations exactly; higher codimension
    maximizes over ``n_dirs`` sampled normal directions followed by a local
    ascent. The grid maximum is polished by a bounded local search around the
    best grid nodes. Flat manifolds return 0.
    """
    return curvature_summary(manifold, n_dirs=n_dirs, refine=refine).K


def refine_extremum(manifold, fun, U, values, n_candidates=3, maximize=True):
    """Polish a grid extremum of ``fun`` by bounded local search in each cell.

    ``fun`` maps ``(m, k)`` parameter points to ``(m,)`` values. Returns the
    best ``(u, value)`` found, never worse than the grid extremum.
    """
    sign = -1.0 if maximize else 1.0
    order = np.argsort(sign * values, kind="stable")
    h = manifold.spacing
    lo_b = np.array([manifold.axis_nodes(i)[0] for i in range(manifold.k)])
    hi_b = np.array([manifold.axis_nodes(i)[-1] for i in range(manifold.k)])
    best_u = U[order[0]].copy()
    best_v = float(values[order[0]])
    seen = []
    for idx in order:
        if len(seen) >= n_candidates:
            break
        u0 = U[idx]
        if any(np.all(np.abs(u0 - s) <= 1.5 * h) for s in seen):
            continue
        seen.append(u0)
        lo = u0 - h / 2
        hi = u0 + h / 2
        # non-periodic axes stay within the span of the grid nodes
        lo = np.where(manifold.periodic, lo, np.maximum(lo, lo_b))
        hi = np.where(manifold.periodic, hi, np.minimum(hi, hi_b))

        def obj(x):
            return sign * float(fun(np.asarray(x, dtype=float)[None, :])[0])

        if manifold.k == 1:
            res = optimize.minimize_scalar(lambda s: obj([s]), bounds=(lo[0], hi[0]), method="bounded",
                                           options={"xatol": 1e-10 * max(1.0, h[0])})
            x, fx = np.array([res.x]), res.fun
        else:
            res = optimize.minimize(obj, u0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                    options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400})
            x, fx = res.x, res.fun
        v = sign * fx
        if (maximize and v > best_v) or (not maximize and v < best_v):
            best_u, best_v = np.asarray(x), float(v)
    return best_u, best_v
