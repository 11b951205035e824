"""Built-in manifold families, sampled manifolds and the JSON spec loader."""

import json
import math
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import SpecError
from .manifold import ChartedManifold

TWO_PI = 2.0 * math.pi


def _pad(N, natural):
    if N is None:
        return natural
    if N < natural:
        raise SpecError(f"ambient_dim {N} is smaller than the family's natural dimension {natural}")
    return int(N)


def _embed(arr, N, axis=-1):
    """Zero-pad the ambient axis of ``arr`` (axis -1, or -2 for derivatives) up to ``N``."""
    n = arr.shape[axis]
    if n == N:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (0, N - n)
    return np.pad(arr, pad)


def _stack_last(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def circle(radius=1.0, grid=256, N=None, center=(0.0, 0.0)):
    """Circle of the given radius, counter-clockwise, ``u in [0, 2pi)``."""
    R = float(radius)
    if R <= 0:
        raise SpecError("circle radius must be positive")
    return ellipse(R, R, grid=grid, N=N, center=center, family="circle", params={"radius": R})


def ellipse(a=2.0, b=1.0, grid=256, N=None, center=(0.0, 0.0), family="ellipse", params=None):
    a, b = float(a), float(b)
    if a <= 0 or b <= 0:
        raise SpecError("ellipse semi-axes must be positive")
    N = _pad(N, 2)
    c = np.asarray(center, dtype=float)

    def func(U):
        t = U[..., 0]
        return _embed(_stack_last(c[0] + a * np.cos(t), c[1] + b * np.sin(t)), N)

    def jac(U):
        t = U[..., 0]
        return _embed(_stack_last(-a * np.sin(t), b * np.cos(t))[..., None], N, axis=-2)

    def hess(U):
        t = U[..., 0]
        return _embed(_stack_last(-a * np.cos(t), -b * np.sin(t))[..., None, None], N, axis=-3)

    return ChartedManifold(func, k=1, N=N, bounds=[(0.0, TWO_PI)], periodic=[True], grid=grid,
                           jac=jac, hess=hess, family=family,
                           params=params if params is not None else {"a": a, "b": b})


def sphere(radius=1.0, grid=(64, 32), N=None):
    """Round sphere with the polar axis along x.

    ``u = (azimuth, polar)``; the azimuth is periodic and the polar angle is
    sampled at cell midpoints of ``(0, pi)``, so grid nodes avoid the chart
    poles ``(+-R, 0, 0)``.
    """
    R = float(radius)
    if R <= 0:
        raise SpecError("sphere radius must be positive")
    N = _pad(N, 3)

    def func(U):
        p, t = U[..., 0], U[..., 1]
        return _embed(R * _stack_last(np.cos(t), np.sin(t) * np.cos(p), np.sin(t) * np.sin(p)), N)

    def jac(U):
        p, t = U[..., 0], U[..., 1]
        z = np.zeros_like(p)
        dp = _stack_last(z, -np.sin(t) * np.sin(p), np.sin(t) * np.cos(p))
        dt = _stack_last(-np.sin(t), np.cos(t) * np.cos(p), np.cos(t) * np.sin(p))
        return _embed(R * np.stack([dp, dt], axis=-1), N, axis=-2)

    def hess(U):
        p, t = U[..., 0], U[..., 1]
        z = np.zeros_like(p)
        dpp = _stack_last(z, -np.sin(t) * np.cos(p), -np.sin(t) * np.sin(p))
        dpt = _stack_last(z, -np.cos(t) * np.sin(p), np.cos(t) * np.cos(p))
        dtt = _stack_last(-np.cos(t), -np.sin(t) * np.cos(p), -np.sin(t) * np.sin(p))
        H = np.stack([np.stack([dpp, dpt], -1), np.stack([dpt, dtt], -1)], -1)
        return _embed(R * H, N, axis=-3)

    return ChartedManifold(func, k=2, N=N, bounds=[(0.0, TWO_PI), (0.0, math.pi)],
                           periodic=[True, False], grid=grid, jac=jac, hess=hess,
                           placement=["periodic", "midpoint"], family="sphere", params={"radius": R})


def torus(R=2.0, r=0.5, grid=(128, 64), N=None):
    """Torus of revolution about the z axis, both angles periodic."""
    R, r = float(R), float(r)
    if not 0 < r < R:
        raise SpecError("torus radii must satisfy 0 < r < R")
    N = _pad(N, 3)

    def func(U):
        u, v = U[..., 0], U[..., 1]
        rho = R + r * np.cos(v)
        return _embed(_stack_last(rho * np.cos(u), rho * np.sin(u), r * np.sin(v)), N)

    def jac(U):
        u, v = U[..., 0], U[..., 1]
        rho = R + r * np.cos(v)
        du = _stack_last(-rho * np.sin(u), rho * np.cos(u), np.zeros_like(u))
        dv = _stack_last(-r * np.sin(v) * np.cos(u), -r * np.sin(v) * np.sin(u), r * np.cos(v))
        return _embed(np.stack([du, dv], axis=-1), N, axis=-2)

    def hess(U):
        u, v = U[..., 0], U[..., 1]
        rho = R + r * np.cos(v)
        z = np.zeros_like(u)
        duu = _stack_last(-rho * np.cos(u), -rho * np.sin(u), z)
        duv = _stack_last(r * np.sin(v) * np.sin(u), -r * np.sin(v) * np.cos(u), z)
        dvv = _stack_last(-r * np.cos(v) * np.cos(u), -r * np.cos(v) * np.sin(u), -r * np.sin(v))
        H = np.stack([np.stack([duu, duv], -1), np.stack([duv, dvv], -1)], -1)
        return _embed(H, N, axis=-3)

    return ChartedManifold(func, k=2, N=N, bounds=[(0.0, TWO_PI), (0.0, TWO_PI)],
                           periodic=[True, True], grid=grid, jac=jac, hess=hess,
                           family="torus", params={"R": R, "r": r})


def segment(length=1.0, grid=65, N=None):
    """Straight segment ``t -> (t, 0, ...)`` on ``[0, length]``; flat, not closed."""
    L = float(length)
    if L <= 0:
        raise SpecError("segment length must be positive")
    N = _pad(N, 2)

    def func(U):
        t = U[..., 0]
        return _embed(_stack_last(t, np.zeros_like(t)), N)

    def jac(U):
        t = U[..., 0]
        return _embed(_stack_last(np.ones_like(t), np.zeros_like(t))[..., None], N, axis=-2)

    def hess(U):
        return np.zeros(U.shape[:-1] + (N, 1, 1))

    return ChartedManifold(func, k=1, N=N, bounds=[(0.0, L)], periodic=[False], grid=grid,
                           jac=jac, hess=hess, family="segment", params={"length": L})


def lemniscate(scale=1.0, grid=256, N=None):
    """Figure-eight ``(cos t, sin t cos t)``: immersed, with a double point at the origin."""
    s = float(scale)
    N = _pad(N, 2)

    def func(U):
        t = U[..., 0]
        return _embed(s * _stack_last(np.cos(t), np.sin(t) * np.cos(t)), N)

    def jac(U):
        t = U[..., 0]
        return _embed(s * _stack_last(-np.sin(t), np.cos(2 * t))[..., None], N, axis=-2)

    def hess(U):
        t = U[..., 0]
        return _embed(s * _stack_last(-np.cos(t), -2 * np.sin(2 * t))[..., None, None], N, axis=-3)

    return ChartedManifold(func, k=1, N=N, bounds=[(0.0, TWO_PI)], periodic=[True], grid=grid,
                           jac=jac, hess=hess, family="lemniscate", params={"scale": s})


# -- graphs of scalar fields -------------------------------------------------------

def _paraboloid(c=1.0):
    return (lambda x: c * np.sum(x * x, axis=-1),
            lambda x: 2 * c * x,
            lambda x: 2 * c * np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],)))


def _saddle(c=1.0):
    def f(x):
        return c * (x[..., 0] ** 2 - np.sum(x[..., 1:] ** 2, axis=-1))

    def g(x):
        s = -np.ones(x.shape[-1])
        s[0] = 1.0
        return 2 * c * s * x

    def h(x):
        s = -np.ones(x.shape[-1])
        s[0] = 1.0
        return 2 * c * np.broadcast_to(np.diag(s), x.shape + (x.shape[-1],))

    return f, g, h


def _gaussian(amplitude=1.0, width=1.0):
    a, w2 = float(amplitude), float(width) ** 2

    def f(x):
        return a * np.exp(-np.sum(x * x, axis=-1) / (2 * w2))

    def g(x):
        return -(f(x) / w2)[..., None] * x

    def h(x):
        eye = np.eye(x.shape[-1])
        return (f(x) / w2)[..., None, None] * (x[..., :, None] * x[..., None, :] / w2 - eye)

    return f, g, h


def _sine(amplitude=1.0, frequency=1.0):
    a, om = float(amplitude), float(frequency)

    def f(x):
        return a * np.sin(om * x[..., 0])

    def g(x):
        out = np.zeros_like(x)
        out[..., 0] = a * om * np.cos(om * x[..., 0])
        return out

    def h(x):
        out = np.zeros(x.shape + (x.shape[-1],))
        out[..., 0, 0] = -a * om * om * np.sin(om * x[..., 0])
        return out

    return f, g, h


def _plane():
    return (lambda x: np.zeros(x.shape[:-1]),
            lambda x: np.zeros_like(x),
            lambda x: np.zeros(x.shape + (x.shape[-1],)))


GRAPH_FIELDS = {
    "paraboloid": _paraboloid,
    "saddle": _saddle,
    "gaussian": _gaussian,
    "sine": _sine,
    "plane": _plane,
}


def graph(field="paraboloid", bounds=((-1.0, 1.0),), grid=None, N=None, **field_params):
    """Graph ``x -> (x, f(x))`` of a named scalar field over a box."""
    if field not in GRAPH_FIELDS:
        raise SpecError(f"unknown graph field {field!r}; choose from {sorted(GRAPH_FIELDS)}")
    try:
        f, g, h = GRAPH_FIELDS[field](**field_params)
    except TypeError as exc:
        raise SpecError(f"bad parameters for graph field {field!r}: {exc}") from exc
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    k = len(bounds)
    N = _pad(N, k + 1)
    if grid is None:
        grid = (33,) * k

    def func(U):
        return _embed(np.concatenate([U, f(U)[..., None]], axis=-1), N)

    def jac(U):
        top = np.broadcast_to(np.eye(k), U.shape[:-1] + (k, k))
        return _embed(np.concatenate([top, g(U)[..., None, :]], axis=-2), N, axis=-2)

    def hess(U):
        top = np.zeros(U.shape[:-1] + (k, k, k))
        return _embed(np.concatenate([top, h(U)[..., None, :, :]], axis=-3), N, axis=-3)

    return ChartedManifold(func, k=k, N=N, bounds=bounds, periodic=[False] * k, grid=grid,
                           jac=jac, hess=hess, family="graph",
                           params={"field": field, "bounds": bounds.tolist(), **field_params})


# -- sampled manifolds -------------------------------------------------------------

class SampledManifold(ChartedManifold):
    """Manifold given by ambient samples on a tensor grid, interpolated by cubic splines.

    Periodic axes use periodic splines (k = 1) or wrap padding (k = 2).
    Grid Jacobians come straight from central differences of the samples.
    """

    sampled = True

    def __init__(self, points, *, bounds, periodic, placement=None, validate=True,
                 reference_speed=None, scale=None, family="sampled", params=None, closure=None):
        points = np.asarray(points, dtype=float)
        k = len(np.asarray(bounds).reshape(-1, 2))
        if points.ndim != k + 1:
            raise SpecError(f"sampled points must have shape (*grid, N) with {k} grid axes")
        if not np.all(np.isfinite(points)):
            raise SpecError("sampled points contain non-finite values")
        grid = points.shape[:k]
        N = points.shape[-1]
        self.points = points
        super().__init__(None, k=k, N=N, bounds=bounds, periodic=periodic, grid=grid,
                         placement=placement, family=family, params=params or {}, validate=False,
                         reference_speed=reference_speed, scale=scale,
                         closure=closure if closure is not None else ((None, None),) * k)
        if min(grid) < 4:
            raise SpecError("sampled manifolds need at least 4 nodes per axis")
        self._func = self._build_interpolant()
        self._samples_cache = points
        if validate:
            self.validate()

    def _build_interpolant(self):
        nodes = [self.axis_nodes(i) for i in range(self.k)]
        lo, L, per = self.bounds[:, 0], self.lengths, self.periodic
        P = self.points

        def wrap(U):
            return np.where(per, lo + np.mod(U - lo, L), U)

        if self.k == 1:
            x, y = nodes[0], P
            if per[0]:
                x = np.append(x, x[0] + L[0])
                y = np.concatenate([y, y[:1]], axis=0)
                cs = CubicSpline(x, y, axis=0, bc_type="periodic")
            else:
                cs = CubicSpline(x, y, axis=0, extrapolate=True)
            return lambda U: cs(wrap(np.asarray(U, dtype=float))[..., 0])
        if self.k == 2:
            xs, Ps = [], P
            for i in range(2):
                x = nodes[i]
                if per[i]:
                    m = 3
                    x = np.concatenate([x[-m:] - L[i], x, x[:m] + L[i]])
                    Ps = np.concatenate([np.take(Ps, range(-m, 0), axis=i), Ps,
                                         np.take(Ps, range(m), axis=i)], axis=i)
                xs.append(x)
            splines = [RectBivariateSpline(xs[0], xs[1], Ps[..., n], kx=3, ky=3, s=0)
                       for n in range(self.N)]

            def func(U):
                V = wrap(np.asarray(U, dtype=float))
                flat = V.reshape(-1, 2)
                out = np.stack([s.ev(flat[:, 0], flat[:, 1]) for s in splines], axis=-1)
                return out.reshape(V.shape[:-1] + (self.N,))

            return func
        raise NotImplementedError("sampled manifolds support k <= 2")

    def grid_jacobian(self):
        if not hasattr(self, "_gridjac_cache"):
            self._gridjac_cache = self.sample_jacobian(self.points)
        return self._gridjac_cache

    def _clone(self, **overrides):
        func = overrides.pop("func", None)
        if func is None and set(overrides) <= {"validate"}:
            return SampledManifold(self.points, bounds=self.bounds, periodic=self.periodic,
                                   placement=self.placement, reference_speed=self._reference_speed,
                                   scale=self._scale, closure=self._closure, **overrides)
        base = ChartedManifold(self._func, k=self.k, N=self.N, bounds=self.bounds,
                               periodic=self.periodic, grid=self.grid, placement=self.placement,
                               family=self.family, params=self.params, validate=False)
        return base._clone(func=func if func is not None else self._func, **overrides)

    def as_sampled(self):
        return self

    def describe(self):
        d = super().describe()
        d["params"] = {}
        return d


def sampled(points, *, bounds, periodic, placement=None, validate=True, reference_speed=None,
            scale=None):
    return SampledManifold(points, bounds=bounds, periodic=periodic, placement=placement,
                           validate=validate, reference_speed=reference_speed, scale=scale)


# -- spec files ----------------------------------------------------------------------

_DEFAULT_GRIDS = {"circle": (256,), "ellipse": (256,), "lemniscate": (256,), "segment": (65,),
                  "sphere": (64, 32), "torus": (128, 64)}


def _grid(grid, k):
    if grid is None:
        return None
    if np.isscalar(grid):
        grid = [grid]
    grid = [int(n) for n in grid]
    if len(grid) != k or min(grid) < 1:
        raise SpecError(f"grid must list {k} positive sample counts")
    return tuple(grid)


def from_spec(spec, grid=None):
    """Build a manifold from a parsed spec dictionary.

    ``grid`` overrides the spec's own grid. Raises :class:`SpecError` on any
    malformed field.
    """
    if not isinstance(spec, dict):
        raise SpecError("manifold spec must be a JSON object")
    family = spec.get("family")
    params = spec.get("params", {}) or {}
    if not isinstance(params, dict):
        raise SpecError("'params' must be an object")
    N = spec.get("ambient_dim")
    if N is not None and (not isinstance(N, int) or N < 2):
        raise SpecError("'ambient_dim' must be an integer >= 2")
    g = grid if grid is not None else spec.get("grid")
    try:
        if family in ("circle", "ellipse", "lemniscate", "segment"):
            g = _grid(g, 1) or _DEFAULT_GRIDS[family]
            ctor = {"circle": circle, "ellipse": ellipse, "lemniscate": lemniscate,
                    "segment": segment}[family]
            return ctor(grid=g, N=N, **params)
        if family in ("sphere", "torus"):
            g = _grid(g, 2) or _DEFAULT_GRIDS[family]
            return (sphere if family == "sphere" else torus)(grid=g, N=N, **params)
        if family == "graph":
            params = dict(params)
            field = params.pop("field", params.pop("closure", "paraboloid"))
            bounds = params.pop("bounds", spec.get("domain", [[-1.0, 1.0]]))
            k = len(np.asarray(bounds).reshape(-1, 2))
            return graph(field=field, bounds=bounds, grid=_grid(g, k), N=N, **params)
        if family == "sampled":
            return _sampled_from_spec(params, N)
    except TypeError as exc:
        raise SpecError(f"bad parameters for family {family!r}: {exc}") from exc
    except ValueError as exc:
        raise SpecError(str(exc)) from exc
    raise SpecError(f"unknown manifold family {family!r}")


def _sampled_from_spec(params, N):
    if "points" in params:
        pts = np.asarray(params["points"], dtype=float)
    elif "path" in params:
        pts = np.loadtxt(params["path"], delimiter=",", skiprows=1, ndmin=2)
    else:
        raise SpecError("sampled spec needs 'points' or 'path'")
    bounds = params.get("bounds")
    periodic = params.get("periodic")
    if bounds is None or periodic is None:
        raise SpecError("sampled spec needs 'bounds' and 'periodic'")
    k = len(np.asarray(bounds).reshape(-1, 2))
    shape = params.get("shape")
    if shape is not None:
        pts = pts.reshape(tuple(shape) + (pts.shape[-1],))
    if pts.ndim != k + 1:
        raise SpecError("sampled points do not match the number of parameter axes")
    if N is not None and pts.shape[-1] != N:
        raise SpecError("sampled points do not match ambient_dim")
    return SampledManifold(pts, bounds=bounds, periodic=periodic, placement=params.get("placement"))


def load_spec(path, grid=None):
    """Read a manifold spec JSON file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read manifold spec {path}: {exc}") from exc
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"malformed manifold spec {path}: {exc}") from exc
    return from_spec(spec, grid=grid)
