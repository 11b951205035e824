"""Linear normal flows, the brute-force embedding oracle and gradient descent.

The oracle is deliberately independent of the tube constants: it only looks
at the sampled snapshot (Jacobian rank at every node, and pairs of nodes far
apart in parameter space but close in space). It is used to check
empirically that the certified time ``t*`` is a lower bound.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import FieldGridMismatch, OracleFailure, SpecError
from .families import SampledManifold
from .manifold import max_curvature_K
from .penalty import l2_gradient, node_weights
from .qift import TubeAnalysis

IMMERSION_RTOL = 1e-8
NORMAL_TOL = 1e-8
GRAD_STOP = 1e-8


# ---------------------------------------------------------------------------
# normal fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalField:
    """A vector per grid node, normal to the manifold and of length at most one."""

    V: np.ndarray

    def validate(self, manifold):
        V = np.asarray(self.V, dtype=float)
        if V.shape != manifold.grid + (manifold.N,):
            raise FieldGridMismatch(f"field shape {V.shape} does not match grid {manifold.grid} x {manifold.N}")
        if np.linalg.norm(V, axis=-1).max() > 1 + 1e-12:
            raise SpecError("normal field exceeds unit length")
        J = manifold.grid_jacobian()
        tang = np.abs(np.einsum("...nk,...n->...k", J, V)).max()
        if tang > NORMAL_TOL * max(1.0, float(np.abs(J).max())):
            raise SpecError(f"field is not normal (|J^T v| = {tang:.3e})")
        return self


def cofactor_normal(J):
    """Unit normal of a hypersurface from the cofactor (generalized cross) product."""
    N = J.shape[-2]
    n = np.empty(J.shape[:-2] + (N,))
    for i in range(N):
        e = np.zeros(J.shape[:-1] + (1,))
        e[..., i, 0] = 1.0
        n[..., i] = np.linalg.det(np.concatenate([J, e], axis=-1))
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def unit_normal_field(manifold, direction="outward"):
    """Unit normal field pointing away from (``outward``) or toward the sample centroid.

    Codimension one uses the globally continuous cofactor normal with one
    orientation chosen by majority vote. Higher codimension projects the
    radial direction from the centroid onto the normal space.
    """
    if direction not in ("inward", "outward"):
        raise SpecError(f"unknown field direction {direction!r}")
    X = manifold.samples()
    J = manifold.grid_jacobian()
    radial = X - X.reshape(-1, manifold.N).mean(axis=0)
    if manifold.N - manifold.k == 1:
        n = cofactor_normal(J)
        if np.sum(np.sign(np.sum(n * radial, axis=-1))) < 0:
            n = -n
    else:
        Q, _ = np.linalg.qr(J)
        n = radial - np.einsum("...nk,...k->...n", Q, np.einsum("...nk,...n->...k", Q, radial))
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        if np.any(norm < 1e-12 * manifold.scale):
            raise SpecError("radial direction is tangent somewhere; no radial normal field")
        n = n / norm
    return NormalField(n if direction == "outward" else -n)


def _field_array(manifold, field):
    V = field.V if isinstance(field, NormalField) else np.asarray(field, dtype=float)
    if V.shape != manifold.grid + (manifold.N,):
        raise FieldGridMismatch(f"field shape {V.shape} does not match grid {manifold.grid} x {manifold.N}")
    return V


def snapshot_of(manifold, X):
    """Wrap sample values on ``manifold``'s grid as a sampled manifold."""
    return SampledManifold(X, bounds=manifold.bounds, periodic=manifold.periodic,
                           placement=manifold.placement, validate=False,
                           reference_speed=manifold.reference_speed, scale=manifold.scale,
                           closure=manifold.closure_maps())


def linear_normal_flow(manifold, field, t):
    """Snapshot of ``phi + t v`` on the sample grid."""
    if t < 0:
        raise SpecError("flow time must be nonnegative")
    V = _field_array(manifold, field)
    return snapshot_of(manifold, manifold.samples() + t * V)


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    passed: bool
    check: str
    witness: Optional[dict] = None

    def __bool__(self):
        return self.passed

    def as_dict(self):
        return {"passed": self.passed, "check": self.check, "witness": self.witness}


def immersion_check(snapshot, rtol=IMMERSION_RTOL):
    """Pass iff the smallest Jacobian singular value beats ``rtol`` times the largest.

    The largest is floored by the snapshot's reference speed so that a grid
    collapsed to round-off noise cannot pass on its own scale.
    """
    J = snapshot.grid_jacobian().reshape(-1, snapshot.N, snapshot.k)
    s = np.linalg.svd(J, compute_uv=False)
    floor = rtol * np.maximum(s[:, 0], snapshot.reference_speed)
    bad = s[:, -1] <= floor
    if np.any(bad):
        i = int(np.argmax(bad))
        u = snapshot.flat_params()[i]
        return Verdict(False, "immersion", {"u": u.tolist(), "sigma_min": float(s[i, -1]),
                                            "sigma_max": float(s[i, 0])})
    return Verdict(True, "immersion")


def median_local_spacing(snapshot):
    """Median over nodes of the finest local spacing.

    Per node and axis the spacing is the mean distance to the axis
    neighbours; the node's local spacing is the smallest over axes.
    """
    X = snapshot.samples()
    k = snapshot.k
    best = np.full(snapshot.grid, np.inf)
    for a in range(k):
        if snapshot.periodic[a]:
            d = np.linalg.norm(np.roll(X, -1, axis=a) - X, axis=-1)
            loc = 0.5 * (d + np.roll(d, 1, axis=a))
        else:
            d = np.linalg.norm(np.diff(X, axis=a), axis=-1)
            lo = [slice(None)] * k
            hi = [slice(None)] * k
            lo[a], hi[a] = slice(0, 1), slice(-1, None)
            left = np.concatenate([d[tuple(lo)], d], axis=a)
            right = np.concatenate([d, d[tuple(hi)]], axis=a)
            loc = 0.5 * (left + right)
        best = np.minimum(best, loc)
    return float(np.median(best))


def injectivity_oracle(snapshot, separation_ratio=0.1):
    """Fail iff two nodes far apart in parameter space nearly coincide in space.

    Far: periodic parameter distance above ``separation_ratio`` times the
    parameter-domain diameter. Near: ambient distance below
    ``separation_ratio`` times :func:`median_local_spacing`.
    """
    X = snapshot.samples().reshape(-1, snapshot.N)
    U = snapshot.flat_params()
    par_thr = separation_ratio * snapshot.domain_diameter()
    amb_thr = separation_ratio * median_local_spacing(snapshot)
    i, j, amb, par = _kernels.close_pair(X, U, snapshot.periods, amb_thr, par_thr)
    if i < 0:
        return Verdict(True, "injectivity")
    return Verdict(False, "injectivity", {"u1": U[i].tolist(), "u2": U[j].tolist(),
                                          "ambient_distance": amb, "parameter_distance": par,
                                          "threshold": amb_thr})


def embedding_oracle(snapshot, separation_ratio=0.1):
    v = immersion_check(snapshot)
    if not v:
        return Verdict(False, "embedding", {"failed": "immersion", **v.witness})
    v = injectivity_oracle(snapshot, separation_ratio)
    if not v:
        return Verdict(False, "embedding", {"failed": "injectivity", **v.witness})
    return Verdict(True, "embedding")


def fold_check(manifold, X0, V, t):
    """Detect a fold crossed on the straight path ``X0 + s V``, ``0 <= s <= t``.

    The symmetrized tangent map ``g0^{-1/2} sym(J0^T J_s) g0^{-1/2}`` starts
    at the identity and is affine in ``s``; a nonpositive eigenvalue at
    ``s = t`` means some node's tangent space degenerated or flipped on the
    way, which a snapshot at ``t`` alone cannot see.
    """
    J0 = manifold.sample_jacobian(X0)
    Jt = manifold.sample_jacobian(X0 + t * V)
    g0 = np.swapaxes(J0, -1, -2) @ J0
    w, P = np.linalg.eigh(g0)
    isq = P @ (np.swapaxes(P, -1, -2) / np.sqrt(w)[..., :, None])
    S = np.swapaxes(J0, -1, -2) @ Jt
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    lam = np.linalg.eigvalsh(isq @ S @ isq)[..., 0]
    if np.any(lam <= 0):
        i = int(np.argmin(lam))
        u = manifold.flat_params()[i]
        return Verdict(False, "fold", {"u": u.tolist(), "min_eigenvalue": float(lam.reshape(-1)[i])})
    return Verdict(True, "fold")


def path_oracle(manifold, field, t, separation_ratio=0.1):
    """Embedding oracle at ``t`` plus the fold check along ``[0, t]``."""
    V = _field_array(manifold, field)
    X0 = manifold.samples()
    v = fold_check(manifold, X0, V, t)
    if not v:
        return Verdict(False, "embedding", {"failed": "fold", **v.witness})
    return embedding_oracle(snapshot_of(manifold, X0 + t * V), separation_ratio)


def max_embedding_time(manifold, field, t_max, resolution=200, rel_tol=1e-4, separation_ratio=0.1):
    """Largest swept ``t <= t_max`` with the path oracle passing at every ``t' <= t``.

    The first failing sweep interval is bisected to ``rel_tol * t_max``.
    """
    if not t_max > 0:
        raise SpecError("t_max must be positive")
    ts = t_max * np.arange(1, resolution + 1) / resolution
    lo = 0.0
    for t in ts:
        if path_oracle(manifold, field, t, separation_ratio):
            lo = t
            continue
        hi = t
        while hi - lo > rel_tol * t_max:
            mid = 0.5 * (lo + hi)
            if path_oracle(manifold, field, mid, separation_ratio):
                lo = mid
            else:
                hi = mid
        return lo
    return float(t_max)


# ---------------------------------------------------------------------------
# gradient descent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepRule:
    """``fixed(h)``, ``tstar_capped(fraction)`` or ``backtracking(c, rho)``."""

    kind: str
    h: float = 0.0
    fraction: float = 0.5
    c: float = 1e-4
    rho: float = 0.5
    recompute_every: int = 10

    @classmethod
    def fixed(cls, h):
        return cls("fixed", h=float(h))

    @classmethod
    def tstar_capped(cls, fraction=0.5, recompute_every=10):
        return cls("tstar_capped", fraction=float(fraction), recompute_every=int(recompute_every))

    @classmethod
    def backtracking(cls, c=1e-4, rho=0.5):
        return cls("backtracking", c=float(c), rho=float(rho))

    @classmethod
    def parse(cls, text):
        """``fixed:0.01``, ``tstar_capped:0.5``, ``backtracking`` or ``backtracking:1e-4,0.5``."""
        name, _, arg = text.partition(":")
        try:
            args = [float(a) for a in arg.split(",") if a.strip()]
            if name == "fixed":
                return cls.fixed(*args)
            if name in ("tstar_capped", "tstar"):
                return cls.tstar_capped(*args)
            if name == "backtracking":
                return cls.backtracking(*args)
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad step rule {text!r}: {exc}") from exc
        raise SpecError(f"unknown step rule {text!r}")

    def __post_init__(self):
        if self.kind == "fixed" and not self.h > 0:
            raise SpecError("fixed step needs h > 0")
        if self.kind == "tstar_capped" and not 0 < self.fraction <= 1:
            raise SpecError("tstar fraction must lie in (0, 1]")
        if self.kind == "backtracking" and not (0 < self.c < 1 and 0 < self.rho < 1):
            raise SpecError("backtracking needs 0 < c < 1 and 0 < rho < 1")


@dataclass
class FlowTrace:
    manifold: object
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    penalty_values: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    t_star: list = field(default_factory=list)
    stop_reason: str = ""

    def record(self, t, X, value, verdict):
        self.times.append(float(t))
        self.snapshots.append(X)
        self.penalty_values.append(float(value))
        self.verdicts.append(verdict)

    @property
    def final(self):
        return snapshot_of(self.manifold, self.snapshots[-1])

    @property
    def steps(self):
        return len(self.snapshots) - 1


def gradient_descent_flow(manifold, penalty, max_steps, step_rule, separation_ratio=0.1,
                          tube_kw=None, check=True):
    """Explicit descent ``phi <- phi + tau v`` with ``v = -(grad P)_normal / max|(grad P)_normal|``.

    ``tau`` is ``h * max|grad|`` for ``fixed(h)``, ``fraction * t*`` for
    ``tstar_capped`` (``t*`` recomputed every ``recompute_every`` steps) and
    an Armijo search from ``min(0.25 * scale, 0.5 / K)`` for ``backtracking``. After every
    step the snapshot and the straight path to it are checked by the oracle;
    a failure raises :class:`OracleFailure` carrying the trace so far.
    """
    if isinstance(step_rule, str):
        step_rule = StepRule.parse(step_rule)
    tube_kw = tube_kw or {}
    trace = FlowTrace(manifold=manifold)
    current = manifold
    X = manifold.samples()
    trace.record(0.0, X, penalty.sample_value(X, manifold), Verdict(True, "embedding"))
    t = 0.0
    t_star = None
    for step in range(1, max_steps + 1):
        grad = l2_gradient(penalty, current)
        Zn = grad.normal
        gmax = float(np.linalg.norm(Zn, axis=-1).max())
        if gmax < GRAD_STOP:
            trace.stop_reason = "gradient below tolerance"
            return trace
        V = -Zn / gmax
        value = trace.penalty_values[-1]
        if step_rule.kind == "fixed":
            tau = step_rule.h * gmax
        elif step_rule.kind == "tstar_capped":
            if t_star is None or (step - 1) % step_rule.recompute_every == 0:
                t_star = TubeAnalysis(current, **tube_kw).safe_flow_time().t_star
                trace.t_star.append((step, t_star))
            tau = step_rule.fraction * t_star
        else:
            slope = float(np.sum(node_weights(current) * np.sum(grad.Z * V, axis=-1)))
            # start inside half the focal distance so the first trial cannot fold
            K = max_curvature_K(current)
            tau = 0.25 * current.scale if K == 0 else min(0.25 * current.scale, 0.5 / K)
            for _ in range(60):
                trial = penalty.sample_value(X + tau * V, current)
                if trial <= value + step_rule.c * tau * slope:
                    break
                tau *= step_rule.rho
            else:
                trace.stop_reason = "line search failed"
                return trace
        Xn = X + tau * V
        verdict = Verdict(True, "embedding")
        if check:
            verdict = path_oracle(current, V, tau, separation_ratio)
        t += tau
        nxt = snapshot_of(manifold, Xn)
        trace.step_sizes.append(float(tau))
        trace.record(t, Xn, penalty.sample_value(Xn, nxt), verdict)
        if not verdict:
            trace.stop_reason = "oracle failure"
            raise OracleFailure(step, verdict.witness, trace)
        X, current = Xn, nxt
    trace.stop_reason = "max steps"
    return trace
