"""Quantitative implicit function theorem and certified tube constants.

The generic engine finds, for ``F(x, lam) = 0`` near a base solution, a box
radius ``delta`` on which ``A0^{-1} A(x, lam)`` stays within 1/2 of the
identity, the induced radius ``delta1`` for the parameter, and solves by the
contraction ``x <- x - A0^{-1} F(x, lam)``.

:class:`TubeAnalysis` specializes this to the endpoint map of the normal
bundle and produces the safe flow time ``t* = min(1/K, delta/3)``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (NoConvergence, NoValidDelta, OutsideCertifiedBox, OutsideTube, SingularDE,
                     SingularMatrix, SpecError)
from .manifold import _as_points, curvature_summary, refine_extremum, sphere_directions
from .normal_bundle import FrameField, align, de_from_jet, frame_jet, raw_frames

SOLVE_TOL = 1e-12
SOLVE_MAX_ITER = 200


def entry_norm(A):
    """Largest absolute entry over the trailing two axes."""
    return np.abs(A).max(axis=(-2, -1))


def adjugate_inverse(A):
    """Inverse through cofactors: entry ``(j, z)`` is ``(-1)^(j+z) minor(A; z, j) / det A``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjugate_inverse expects a square matrix")
    inv, det = _kernels.adjugate_inverse_batch(A[None])
    if not abs(det[0]) > 1e-14:
        raise SingularMatrix(f"matrix is singular (det = {det[0]:.3e})")
    return inv[0]


# ---------------------------------------------------------------------------
# generic engine
# ---------------------------------------------------------------------------

def _fd_partial(F, x, lam, which, h=1e-6):
    """Central-difference partial Jacobian of ``F`` in ``x`` (which=0) or ``lam``."""
    z = x if which == 0 else lam
    cols = []
    for i in range(z.shape[-1]):
        step = h * np.maximum(1.0, np.abs(z[..., i]))
        e = np.zeros(z.shape)
        e[..., i] = step
        if which == 0:
            d = (F(x + e, lam) - F(x - e, lam)) / (2 * step[..., None])
        else:
            d = (F(x, lam + e) - F(x, lam - e)) / (2 * step[..., None])
        cols.append(d)
    return np.stack(cols, axis=-1)


class ImplicitProblem:
    """``F: R^m x R^n -> R^m`` with a base solution ``F(x0, lam0) = 0``.

    ``F``, ``dF_x`` and ``dF_lam`` must broadcast over leading batch axes.
    Missing derivatives fall back to central differences. ``scale`` sets the
    top of the radius search.
    """

    def __init__(self, F, x0, lam0, dF_x=None, dF_lam=None, scale=1.0, residual_tol=1e-12):
        self.F = F
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.lam0 = np.atleast_1d(np.asarray(lam0, dtype=float))
        self.m = self.x0.size
        self.n = self.lam0.size
        self._dFx = dF_x
        self._dFl = dF_lam
        self.scale = float(scale)
        res = np.abs(np.asarray(F(self.x0, self.lam0), dtype=float)).max()
        if not res <= residual_tol:
            raise SpecError(f"base point is not a solution: |F(x0, lam0)| = {res:.3e}")
        A0 = self.dF_x(self.x0, self.lam0)
        if np.linalg.cond(A0) > 1e12:
            raise SingularMatrix("d_x F at the base point is not invertible")
        self.A0 = A0

    def dF_x(self, x, lam):
        if self._dFx is not None:
            return np.asarray(self._dFx(x, lam), dtype=float)
        return _fd_partial(self.F, np.asarray(x, float), np.asarray(lam, float), 0)

    def dF_lam(self, x, lam):
        if self._dFl is not None:
            return np.asarray(self._dFl(x, lam), dtype=float)
        return _fd_partial(self.F, np.asarray(x, float), np.asarray(lam, float), 1)


@dataclass(frozen=True)
class QiftConstants:
    delta: float
    B_delta: float
    M_norm: float
    delta1: float
    sup_value: float
    A0_inv: np.ndarray = field(repr=False)


def _box_samples(center, delta, density, max_points=50000, seed=0):
    d = center.size
    if density ** d <= max_points:
        axes = [np.linspace(-1.0, 1.0, density)] * d
        S = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    else:
        rng = np.random.default_rng(seed)
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
        S = np.concatenate([corners[:max_points // 2], rng.uniform(-1, 1, (max_points // 2, d))])
    return center + delta * S


def _contraction_sup(problem, A0inv, Z):
    x, lam = Z[:, :problem.m], Z[:, problem.m:]
    D = np.eye(problem.m) - A0inv @ problem.dF_x(x, lam)
    return float(entry_norm(D).max())


def qift_constants(problem, search_grid=None, density=9, seed=0, n_check=1000, bisect_iter=40):
    """Certified radii for the implicit problem.

    With an explicit ``search_grid`` the largest passing value is taken.
    Otherwise radii ``scale, scale/2, ...`` are tried until one passes and the
    boundary is then bisected. A fresh random sample of ``n_check`` points
    re-verifies the condition; the radius shrinks until it holds.
    """
    A0inv = adjugate_inverse(problem.A0)
    M = float(np.abs(A0inv).max())
    base = np.concatenate([problem.x0, problem.lam0])

    def ok(delta):
        return _contraction_sup(problem, A0inv, _box_samples(base, delta, density)) <= 0.5

    if search_grid is not None:
        cands = sorted((float(d) for d in search_grid if d > 0), reverse=True)
        delta = next((d for d in cands if ok(d)), None)
        if delta is None:
            raise NoValidDelta("no radius on the search grid satisfies the contraction condition")
    else:
        hi = problem.scale
        lo = None
        for _ in range(60):
            if ok(hi):
                lo = hi
                break
            hi /= 2
        if lo is None:
            raise NoValidDelta("contraction condition fails down to scale * 2^-60")
        fail = 2 * lo if lo < problem.scale else None
        if fail is not None:
            for _ in range(bisect_iter):
                mid = 0.5 * (lo + fail)
                if ok(mid):
                    lo = mid
                else:
                    fail = mid
        delta = lo
    rng = np.random.default_rng(seed)
    for _ in range(60):
        Z = base + delta * rng.uniform(-1, 1, (n_check, base.size))
        if _contraction_sup(problem, A0inv, Z) <= 0.5 + 1e-9:
            break
        delta *= 0.9
    else:
        raise NoValidDelta("random post-check keeps failing")
    Zb = _box_samples(base, delta, density)
    B = float(entry_norm(problem.dF_lam(Zb[:, :problem.m], Zb[:, problem.m:])).max())
    sup = _contraction_sup(problem, A0inv, Zb)
    delta1 = delta / (2 * M * B) if B > 0 else np.inf
    return QiftConstants(delta=float(delta), B_delta=B, M_norm=M, delta1=float(delta1),
                         sup_value=sup, A0_inv=A0inv)


def qift_solve(problem, constants, lam):
    """Solve ``F(x, lam) = 0`` by the certified contraction from ``x0``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if not np.abs(lam - problem.lam0).max() < constants.delta1:
        raise OutsideCertifiedBox(f"|lam - lam0| >= delta1 = {constants.delta1:.6g}")
    x = problem.x0.copy()
    for _ in range(SOLVE_MAX_ITER + 1):
        Fx = np.asarray(problem.F(x, lam), dtype=float)
        if np.abs(Fx).max() < SOLVE_TOL:
            break
        x = x - constants.A0_inv @ Fx
    else:
        raise NoConvergence("contraction did not converge; certified constants were violated")
    if np.abs(x - problem.x0).max() > constants.delta * (1 + 1e-12):
        raise NoConvergence("solution left the certified box")
    return x


# ---------------------------------------------------------------------------
# tube constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TubePoint:
    delta0: float
    delta1: float
    delta3: float
    delta_point: float
    det_DE: float
    M: float


@dataclass
class TubeConstants:
    K: float
    K_inv: float
    delta: float
    epsilon: float
    t_star: float
    G: np.ndarray
    Gp: np.ndarray
    tube_radius: float
    delta_q0: np.ndarray
    argmin_u: np.ndarray
    per_point: dict
    grid: tuple
    n_dirs: int
    n_radii: int

    def summary(self):
        return {"K": self.K, "K_inv": self.K_inv, "delta": self.delta, "epsilon": self.epsilon,
                "t_star": self.t_star, "tube_radius": self.tube_radius, "grid": list(self.grid)}


class TubeAnalysis:
    """Tube constants of a manifold in length-normalized normal coordinates.

    Parameter coordinates are rescaled to ``q^j = L_j u^j`` with ``L_j`` the
    mean speed along axis ``j``, which makes every radius covariant under
    ambient dilation. The tube is ``|r| <= 0.999 / K`` (the ambient diameter
    when ``K = 0``). Remainder bounds use the exact maximum over the normal
    ball: ``DE`` is affine in ``r``, so ``max |A + r.B| = |A| + rho |B|``.
    """

    def __init__(self, manifold, frame_field=None, *, n_dirs=64, n_radii=8, safety=1.1,
                 refine=True, n_candidates=3):
        self.manifold = manifold
        self.ff = frame_field if frame_field is not None else FrameField(manifold)
        self.n_dirs = int(n_dirs)
        self.n_radii = int(n_radii)
        if self.n_dirs < 1 or self.n_radii < 1:
            raise ValueError("sampling densities must be positive")
        self.safety = float(safety)
        self.refine = refine
        self.n_candidates = n_candidates
        self.N = manifold.N
        self.k = manifold.k
        self.c = self.N - self.k
        self.curv = curvature_summary(manifold, n_dirs=n_dirs, refine=refine)
        self.K = self.curv.K
        self.K_inv = 1.0 / self.K if self.K > 0 else np.inf
        self.rho = 0.999 * self.K_inv if self.K > 0 else manifold.scale
        self.L = manifold.chart_scales()
        self.cap = manifold.scale
        U = manifold.grid_params().reshape(-1, self.k)
        W = self.ff.W.reshape(-1, self.N, self.c)
        self.jet = frame_jet(manifold, U, W, second=True)
        self._G_grid, self._Gp_grid = self._bounds(self.jet)
        G, Gp = self._G_grid.max(axis=0), self._Gp_grid.max(axis=0)
        if refine:
            G, Gp = self._refine_bounds(U, G, Gp)
        self.G = self.safety * G
        self.Gp = self.safety * Gp
        self.fiber = self._fiber()

    # -- remainder bounds ------------------------------------------------------

    def _bounds(self, jet):
        """Per-point ``G`` (N x N) and ``G^p`` (N) before the safety factor."""
        L, rho, k = self.L, self.rho, self.k
        LL = L[:, None] * L[None, :]
        # tangent columns: d/dq^a and d/dr^b
        dq_t = (np.abs(jet.H) + rho * np.linalg.norm(jet.d2W, axis=-3)) / LL
        dr_t = np.abs(jet.dW) / L
        Gt = np.maximum(dq_t.max(axis=-1), dr_t.max(axis=-2))
        # normal columns: only d/dq^a is nonzero
        Gn = (np.abs(jet.dW) / L).max(axis=-1)
        G = np.concatenate([Gt, Gn], axis=-1)
        Et = (np.abs(jet.J) + rho * np.linalg.norm(jet.dW, axis=-2)) / L
        Gp = np.maximum(Et.max(axis=-1), np.abs(jet.W).max(axis=-1))
        return G, Gp

    def _jet_at(self, U, second=True):
        U = self.manifold.wrap(_as_points(U, self.k))
        W0 = self.ff.frames_at(U)
        return frame_jet(self.manifold, U, W0, second=second)

    def _refine_bounds(self, U, G, Gp):
        G, Gp = G.copy(), Gp.copy()

        def entry(p, m):
            return lambda V: self._bounds(self._jet_at(V))[0][:, p, m]

        def pentry(p):
            return lambda V: self._bounds(self._jet_at(V))[1][:, p]

        for p in range(self.N):
            for m in range(self.N):
                vals = self._G_grid[:, p, m]
                if vals.max() > 0:
                    _, v = refine_extremum(self.manifold, entry(p, m), U, vals, n_candidates=1)
                    G[p, m] = max(G[p, m], v)
            vals = self._Gp_grid[:, p]
            _, v = refine_extremum(self.manifold, pentry(p), U, vals, n_candidates=1)
            Gp[p] = max(Gp[p], v)
        return G, Gp

    # -- per-point constants ---------------------------------------------------------

    def _fiber(self):
        """Fiber samples: r = 0 plus ``n_radii`` radii along each sampled direction."""
        dirs = sphere_directions(self.c, self.n_dirs)
        radii = self.rho * np.arange(1, self.n_radii + 1) / self.n_radii
        R = (radii[:, None, None] * dirs[None]).reshape(-1, self.c)
        return np.concatenate([np.zeros((1, self.c)), R])

    def point_constants(self, jet, r):
        """Constants at base points ``(jet.U, r)``; ``r`` broadcasts as ``(..., c)``."""
        D = de_from_jet(jet, r, self.L)
        shape = D.shape[:-2]
        inv, det = _kernels.adjugate_inverse_batch(D.reshape(-1, self.N, self.N))
        inv = inv.reshape(shape + (self.N, self.N))
        det = det.reshape(shape)
        # normalized coordinates make DE dimensionless, so this threshold is scale-free
        if np.any(~(np.abs(det) > 1e-12)):
            raise SingularDE("det DE vanishes inside the sampled tube; K is underestimated")
        absinv = np.abs(inv)
        with np.errstate(divide="ignore"):
            delta0 = 1.0 / (2 * self.N * (absinv @ self.G).max(axis=(-2, -1)))
        delta0 = np.minimum(delta0, self.cap)
        M = absinv.max(axis=(-2, -1))
        delta1 = delta0 / (2 * M)
        gp = np.sqrt(self.N * np.sum(self.Gp ** 2))
        delta3 = delta1 / gp if gp > 0 else delta1
        return {"delta0": delta0, "delta1": delta1, "delta3": delta3,
                "delta_point": np.minimum(delta3, delta0), "det_DE": det, "M": M}

    def constants_at(self, u, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.linalg.norm(r) > self.rho * (1 + 1e-12):
            raise OutsideTube(f"|r| = {np.linalg.norm(r):.6g} exceeds the tube radius {self.rho:.6g}")
        jet = self._jet_at(u, second=False)
        out = self.point_constants(jet, r)
        return TubePoint(**{k: float(np.asarray(v).reshape(-1)[0]) for k, v in out.items()})

    def _fiber_min(self, jet):
        """Per base point: min over the fiber of delta_point, plus the full table."""
        tab = self.point_constants(_broadcast_jet(jet, len(self.fiber)), self.fiber)
        return tab["delta_point"].min(axis=-1), tab

    def table(self):
        if not hasattr(self, "_table"):
            jet = self.jet
            dq0, tab = self._fiber_min(jet)
            self._table = (dq0, tab)
        return self._table

    def safe_flow_time(self):
        dq0, tab = self.table()
        U = self.jet.U
        u_min = U[int(np.argmin(dq0))]
        best = float(dq0.min())
        if self.refine:
            def f(V):
                return self._fiber_min(self._jet_at(V, second=False))[0]

            u_ref, v = refine_extremum(self.manifold, f, U, dq0, n_candidates=self.n_candidates,
                                       maximize=False)
            if v < best:
                best, u_min = v, u_ref
        delta = best / 2
        eps = min(self.K_inv, delta / 3)
        n_fib = len(self.fiber)
        per_point = {
            "u": np.repeat(U, n_fib, axis=0),
            "r": np.tile(self.fiber, (len(U), 1)),
        }
        for key in ("delta0", "delta1", "delta3", "delta_point", "det_DE"):
            per_point[key] = tab[key].reshape(-1)
        return TubeConstants(K=self.K, K_inv=self.K_inv, delta=delta, epsilon=eps, t_star=eps,
                             G=self.G, Gp=self.Gp, tube_radius=self.rho,
                             delta_q0=dq0.reshape(self.manifold.grid), argmin_u=np.asarray(u_min),
                             per_point=per_point, grid=self.manifold.grid, n_dirs=self.n_dirs,
                             n_radii=self.n_radii)

    def endpoint_problem(self, u0, r0):
        """The endpoint map at ``(u0, r0)`` as a generic implicit problem.

        ``x = (q, r)`` in normalized coordinates, ``lam = y``, ``F = E(x) - y``.
        """
        m = self.manifold
        u0 = m.wrap(_as_points(u0, self.k))
        r0 = np.atleast_1d(np.asarray(r0, dtype=float))
        W0 = self.ff.frames_at(u0)
        L, k = self.L, self.k

        def split(x):
            x = np.asarray(x, dtype=float)
            return x[..., :k] / L, x[..., k:]

        def frames(U):
            return align(raw_frames(m.jacobian(U)), np.broadcast_to(W0, U.shape[:-1] + W0.shape))

        def F(x, y):
            U, r = split(x)
            return m.evaluate(U) + np.einsum("...nc,...c->...n", frames(U), r) - y

        def dFx(x, y):
            U, r = split(x)
            U = m.wrap(U)
            jet = frame_jet(m, U, frames(U), second=False)
            return de_from_jet(jet, r, L)

        def dFl(x, y):
            return np.broadcast_to(-np.eye(self.N), np.shape(y)[:-1] + (self.N, self.N))

        x0 = np.concatenate([u0 * L, r0])
        y0 = F(x0, np.zeros(self.N))
        return ImplicitProblem(F, x0, y0, dF_x=dFx, dF_lam=dFl, scale=self.rho if np.isfinite(self.rho) else m.scale)


def _broadcast_jet(jet, n):
    """Repeat every per-point array of a jet along a new fiber axis of length ``n``."""
    def rep(a, tail):
        if a is None:
            return None
        return np.broadcast_to(a[:, None], (a.shape[0], n) + a.shape[1:]) if a.ndim > tail else a

    from .normal_bundle import FrameJet

    return FrameJet(U=jet.U, phi=jet.phi, J=rep(jet.J, 2), H=None, W=rep(jet.W, 2),
                    dW=rep(jet.dW, 3), d2W=None)


# ---------------------------------------------------------------------------
# functional wrappers
# ---------------------------------------------------------------------------

def tube_constants_at(manifold, frame_field, u, r, analysis=None, **kw):
    """``(delta0, delta1, delta3, delta_point)`` at the base point ``(u, r)``."""
    an = analysis if analysis is not None else TubeAnalysis(manifold, frame_field, **kw)
    p = an.constants_at(u, r)
    return p.delta0, p.delta1, p.delta3, p.delta_point


def safe_radius_delta(manifold, frame_field=None, **kw):
    return TubeAnalysis(manifold, frame_field, **kw).safe_flow_time().delta


def safe_flow_time(manifold, frame_field=None, **kw):
    """Aggregate tube constants including ``epsilon`` and ``t*``."""
    return TubeAnalysis(manifold, frame_field, **kw).safe_flow_time()
