"""Drift fields: a named registry of bounded vector fields, composition,
and mollification.

Every field carries declared bounds (sup norm, spatial L1 norm) and a kind
tag.  Smooth fields expose an exact spatial derivative; measurable ones are
evaluated pointwise with literal values at discontinuities.  Mollification
replaces jumps with a polynomial smoothstep of width eps, which is the exact
convolution of the jump with a C^4 compactly supported kernel, so mollified
members have closed-form derivatives instead of finite-difference ghosts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DriftField",
    "MollifiedFamily",
    "make_drift",
    "drift_registry",
    "mollifier_cdf",
    "mollifier_pdf",
]

_C4 = 315.0 / 256.0  # normalizer of (1-v^2)^4 on [-1,1]


def mollifier_pdf(y):
    """C^4 compactly supported kernel rho(y) = (315/256)(1-y^2)^4 on [-1,1]."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = np.abs(y) < 1.0
    out[m] = _C4 * (1.0 - y[m] ** 2) ** 4
    return out


def mollifier_pdf_deriv(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = np.abs(y) < 1.0
    out[m] = _C4 * -8.0 * y[m] * (1.0 - y[m] ** 2) ** 3
    return out


def mollifier_cdf(y):
    """Antiderivative of the kernel: 0 below -1, 1 above 1, smoothstep between."""
    y = np.asarray(y, dtype=float)
    yc = np.clip(y, -1.0, 1.0)
    p = _C4 * (yc - 4.0 * yc ** 3 / 3.0 + 1.2 * yc ** 5 - 4.0 * yc ** 7 / 7.0 + yc ** 9 / 9.0)
    return 0.5 + p


@dataclass
class DriftField:
    """A bounded drift b(t, x) with declared norms.

    evaluate takes t (scalar or array broadcastable against x[..., 0]) and
    x of shape (..., dim), returns (..., dim).  db, when present, returns
    the spatial Jacobian (..., dim, dim); d2b the second derivative tensor
    (..., dim, dim, dim).  kind is "smooth" only when db is exact.
    """

    name: str
    dim: int
    kind: str
    sup_norm: float
    l1_bound: float
    _eval: Callable = field(repr=False)
    _db: Callable | None = field(default=None, repr=False)
    _d2b: Callable | None = field(default=None, repr=False)
    _mollify: Callable | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("smooth", "measurable"):
            raise ValueError(f"kind must be smooth or measurable, got {self.kind!r}")
        if self.kind == "smooth" and self._db is None:
            raise ValueError("smooth drifts must provide a spatial derivative")

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got shape {x.shape}")
        return self._eval(t, x)

    def __call__(self, t, x):
        return self.evaluate(t, x)

    def db(self, t, x):
        if self._db is None:
            raise ValueError(f"drift {self.name!r} has no spatial derivative")
        return self._db(t, np.asarray(x, dtype=float))

    def d2b(self, t, x):
        if self._d2b is None:
            raise ValueError(f"drift {self.name!r} has no second derivative")
        return self._d2b(t, np.asarray(x, dtype=float))


def _zero(dim=1):
    z = lambda t, x: np.zeros_like(x)
    jac = lambda t, x: np.zeros(x.shape + (dim,))
    jac2 = lambda t, x: np.zeros(x.shape + (dim, dim))
    return DriftField("zero", dim, "smooth", 0.0, 0.0, z, jac, jac2,
                      _mollify=lambda eps: _zero(dim), params={"dim": dim})


def _constant(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = c.size

    def ev(t, x):
        return np.broadcast_to(c, x.shape).copy()

    jac = lambda t, x: np.zeros(x.shape + (dim,))
    jac2 = lambda t, x: np.zeros(x.shape + (dim, dim))
    f = DriftField("constant", dim, "smooth", float(np.max(np.abs(c))), math.inf,
                   ev, jac, jac2, params={"c": c.tolist()})
    f._mollify = lambda eps: f
    return f


def _linear(A, radius=10.0):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    dim = A.shape[0]
    if A.shape != (dim, dim):
        raise ValueError("linear drift needs a square matrix")
    # bounded only on the declared working box |x| <= radius
    sup = float(np.linalg.norm(A, 2) * radius)

    def ev(t, x):
        return x @ A.T

    jac = lambda t, x: np.broadcast_to(A, x.shape + (dim,)).copy()
    jac2 = lambda t, x: np.zeros(x.shape + (dim, dim))
    f = DriftField("linear", dim, "smooth", sup, math.inf, ev, jac, jac2,
                   params={"A": A.tolist(), "radius": radius})
    f._mollify = lambda eps: f
    return f


def _sign(amp=1.0):
    def ev(t, x):
        return amp * np.sign(x)

    def moll(eps):
        def ev_eps(t, x):
            return amp * (2.0 * mollifier_cdf(x / eps) - 1.0)

        def jac(t, x):
            return (2.0 * amp / eps) * mollifier_pdf(x / eps)[..., None]

        def jac2(t, x):
            return (2.0 * amp / eps ** 2) * mollifier_pdf_deriv(x / eps)[..., None, None]

        return DriftField(f"sign~{eps:g}", 1, "smooth", amp, math.inf,
                          ev_eps, jac, jac2, params={"amp": amp, "eps": eps})

    return DriftField("sign", 1, "measurable", amp, math.inf, ev,
                      _mollify=moll, params={"amp": amp})


def _indicator(a=0.0, b=1.0, amp=1.0):
    if not a < b:
        raise ValueError("indicator needs a < b")

    def ev(t, x):
        return amp * ((x >= a) & (x <= b)).astype(float)

    def moll(eps):
        def ev_eps(t, x):
            return amp * (mollifier_cdf((x - a) / eps) - mollifier_cdf((x - b) / eps))

        def jac(t, x):
            v = (mollifier_pdf((x - a) / eps) - mollifier_pdf((x - b) / eps)) / eps
            return amp * v[..., None]

        def jac2(t, x):
            v = (mollifier_pdf_deriv((x - a) / eps) - mollifier_pdf_deriv((x - b) / eps)) / eps ** 2
            return amp * v[..., None, None]

        return DriftField(f"indicator~{eps:g}", 1, "smooth", amp, amp * (b - a),
                          ev_eps, jac, jac2, params={"a": a, "b": b, "amp": amp, "eps": eps})

    return DriftField("indicator", 1, "measurable", amp, amp * (b - a), ev,
                      _mollify=moll, params={"a": a, "b": b, "amp": amp})


def _bump(amp=1.0, center=0.0, width=1.0, dim=1):
    center = np.broadcast_to(np.asarray(center, dtype=float), (dim,))

    def profile(r2):
        out = np.zeros_like(r2)
        m = r2 < 1.0
        out[m] = np.exp(-1.0 / (1.0 - r2[m]))
        return out

    def ev(t, x):
        y = (x - center) / width
        r2 = np.sum(y * y, axis=-1)
        return amp * profile(r2)[..., None] * np.ones(dim)

    def _f_derivs(r2):
        # f(s) = exp(-1/(1-s)): f' = f*g', f'' = f*(g'^2 + g'') with g = -1/(1-s)
        f = profile(r2)
        f1 = np.zeros_like(r2)
        f2 = np.zeros_like(r2)
        m = r2 < 1.0
        gp = -1.0 / (1.0 - r2[m]) ** 2
        gpp = -2.0 / (1.0 - r2[m]) ** 3
        f1[m] = f[m] * gp
        f2[m] = f[m] * (gp * gp + gpp)
        return f1, f2

    def jac(t, x):
        y = (x - center) / width
        r2 = np.sum(y * y, axis=-1)
        f1, _ = _f_derivs(r2)
        grad = (2.0 / width) * f1[..., None] * y
        return amp * np.ones(dim)[:, None] * grad[..., None, :]

    def jac2(t, x):
        y = (x - center) / width
        r2 = np.sum(y * y, axis=-1)
        f1, f2 = _f_derivs(r2)
        eye = np.eye(dim)
        hess = (4.0 * f2[..., None, None] * y[..., :, None] * y[..., None, :]
                + 2.0 * f1[..., None, None] * eye) / width ** 2
        return amp * np.ones(dim)[:, None, None] * hess[..., None, :, :]

    # L1 norm of the profile in d=1 is ~0.444 width; scaled by amp and dim
    l1 = amp * 0.4439938 * (2.0 * width) ** dim
    f = DriftField("bump", dim, "smooth", amp * math.exp(-1.0), l1, ev, jac, jac2,
                   params={"amp": amp, "center": center.tolist(), "width": width, "dim": dim})
    f._mollify = lambda eps: _stencil_mollify(f, eps)
    return f


def _square_wave_eps(x, cell, eps):
    """Exact mollification of (-1)^floor(x/cell) when eps <= cell/2."""
    m = np.round(x / cell)
    left = np.where(m % 2 == 0, -1.0, 1.0)  # value of (-1)^floor just left of m*cell
    s = mollifier_cdf((x - m * cell) / eps)
    return left * (1.0 - 2.0 * s)


def _square_wave_eps_deriv(x, cell, eps):
    m = np.round(x / cell)
    left = np.where(m % 2 == 0, -1.0, 1.0)
    return left * (-2.0 / eps) * mollifier_pdf((x - m * cell) / eps)


def _square_wave_eps_deriv2(x, cell, eps):
    m = np.round(x / cell)
    left = np.where(m % 2 == 0, -1.0, 1.0)
    return left * (-2.0 / eps ** 2) * mollifier_pdf_deriv((x - m * cell) / eps)


def _checkerboard(amp=1.0, cell=0.5, period=0.25):
    """Time-oscillating checkerboard in d=2: the sign of the field flips
    between adjacent spatial cells and again at each multiple of the period,
    pushing mass along the diagonal.  A deliberately ugly stress drift."""
    dirv = np.array([1.0, 1.0]) / math.sqrt(2.0)

    def sigma_t(t):
        return np.where(np.floor(np.asarray(t, dtype=float) / period) % 2 == 0, 1.0, -1.0)

    def ev(t, x):
        s1 = np.where(np.floor(x[..., 0] / cell) % 2 == 0, 1.0, -1.0)
        s2 = np.where(np.floor(x[..., 1] / cell) % 2 == 0, 1.0, -1.0)
        return amp * (sigma_t(t) * s1 * s2)[..., None] * dirv

    def moll(eps):
        if eps > cell / 2.0:
            raise ValueError("mollification width exceeds half a cell")

        def ev_eps(t, x):
            s1 = _square_wave_eps(x[..., 0], cell, eps)
            s2 = _square_wave_eps(x[..., 1], cell, eps)
            return amp * (sigma_t(t) * s1 * s2)[..., None] * dirv

        def jac(t, x):
            s1 = _square_wave_eps(x[..., 0], cell, eps)
            s2 = _square_wave_eps(x[..., 1], cell, eps)
            d1 = _square_wave_eps_deriv(x[..., 0], cell, eps)
            d2 = _square_wave_eps_deriv(x[..., 1], cell, eps)
            st = sigma_t(t)
            g = np.stack([st * d1 * s2, st * s1 * d2], axis=-1)
            return amp * dirv[:, None] * g[..., None, :]

        def jac2(t, x):
            s1 = _square_wave_eps(x[..., 0], cell, eps)
            s2 = _square_wave_eps(x[..., 1], cell, eps)
            d1 = _square_wave_eps_deriv(x[..., 0], cell, eps)
            d2 = _square_wave_eps_deriv(x[..., 1], cell, eps)
            h1 = _square_wave_eps_deriv2(x[..., 0], cell, eps)
            h2 = _square_wave_eps_deriv2(x[..., 1], cell, eps)
            st = sigma_t(t)
            hess = np.stack([
                np.stack([st * h1 * s2, st * d1 * d2], axis=-1),
                np.stack([st * d1 * d2, st * s1 * h2], axis=-1),
            ], axis=-2)
            return amp * dirv[:, None, None] * hess[..., None, :, :]

        return DriftField(f"checkerboard~{eps:g}", 2, "smooth", amp, math.inf,
                          ev_eps, jac, jac2,
                          params={"amp": amp, "cell": cell, "period": period, "eps": eps})

    return DriftField("checkerboard", 2, "measurable", amp, math.inf, ev,
                      _mollify=moll, params={"amp": amp, "cell": cell, "period": period})


_GL9_X, _GL9_W = np.polynomial.legendre.leggauss(9)
_GL9_RHO = mollifier_pdf(_GL9_X) * _GL9_W
_GL9_RHO = _GL9_RHO / _GL9_RHO.sum()  # convex weights: preserves constants and sup bound


def _stencil_mollify(base: DriftField, eps: float) -> DriftField:
    """Generic fallback: tensor-product 9-point quadrature of the
    convolution.  Inherits smoothness from the base, so it is only tagged
    smooth when the base already is."""
    d = base.dim
    grids = np.meshgrid(*([_GL9_X] * d), indexing="ij")
    offsets = eps * np.stack([g.ravel() for g in grids], axis=-1)   # (9^d, d)
    weights = np.ones(9 ** d)
    for g in grids:
        weights = weights * np.interp(g.ravel(), _GL9_X, _GL9_RHO)
    weights = weights / weights.sum()

    def ev(t, x):
        acc = np.zeros_like(x)
        for w, off in zip(weights, offsets):
            acc += w * base.evaluate(t, x - off)
        return acc

    db = None
    if base._db is not None:
        def db(t, x):
            acc = np.zeros(x.shape + (d,))
            for w, off in zip(weights, offsets):
                acc += w * base.db(t, x - off)
            return acc

    return DriftField(f"{base.name}~{eps:g}", d, base.kind, base.sup_norm,
                      base.l1_bound, ev, db,
                      params=dict(base.params, eps=eps))


@dataclass
class MollifiedFamily:
    """Members b_n = base * kernel_eps with eps_n = 2^(-n).

    Sup norms never exceed the base's, and members converge to the base at
    every continuity point.  Registry drifts with jumps use the exact
    closed-form convolution; anything else falls back to the stencil rule.
    """

    base: DriftField

    def epsilon(self, n: int) -> float:
        return 2.0 ** (-n)

    def member(self, n: int) -> DriftField:
        if n < 0:
            raise ValueError("mollification level must be >= 0")
        eps = self.epsilon(n)
        if self.base._mollify is not None:
            return self.base._mollify(eps)
        return _stencil_mollify(self.base, eps)


def _sum_drift(parts, coefs=None):
    if coefs is None:
        coefs = [1.0] * len(parts)
    if len(coefs) != len(parts) or not parts:
        raise ValueError("sum needs parts and matching coefficients")
    dim = parts[0].dim
    if any(p.dim != dim for p in parts):
        raise ValueError("sum members must share a dimension")
    kind = "smooth" if all(p.kind == "smooth" for p in parts) else "measurable"
    sup = float(sum(abs(c) * p.sup_norm for c, p in zip(coefs, parts)))
    l1 = float(sum(abs(c) * p.l1_bound for c, p in zip(coefs, parts)))

    def ev(t, x):
        acc = coefs[0] * parts[0].evaluate(t, x)
        for c, p in zip(coefs[1:], parts[1:]):
            acc += c * p.evaluate(t, x)
        return acc

    db = None
    d2b = None
    if kind == "smooth":
        def db(t, x):
            acc = coefs[0] * parts[0].db(t, x)
            for c, p in zip(coefs[1:], parts[1:]):
                acc += c * p.db(t, x)
            return acc

        if all(p._d2b is not None for p in parts):
            def d2b(t, x):
                acc = coefs[0] * parts[0].d2b(t, x)
                for c, p in zip(coefs[1:], parts[1:]):
                    acc += c * p.d2b(t, x)
                return acc

    def moll(eps):
        # convolution is linear: mollify each summand
        mparts = [p._mollify(eps) if p._mollify is not None else _stencil_mollify(p, eps)
                  for p in parts]
        return _sum_drift(mparts, coefs)

    return DriftField("sum", dim, kind, sup, l1, ev, db, d2b, _mollify=moll,
                      params={"parts": [p.name for p in parts], "coefs": list(coefs)})


_REGISTRY = {
    "zero": _zero,
    "constant": _constant,
    "linear": _linear,
    "sign": _sign,
    "indicator": _indicator,
    "bump": _bump,
    "checkerboard": _checkerboard,
    "sum": _sum_drift,
}


def drift_registry() -> dict:
    """Name -> constructor map for all built-in drifts."""
    return dict(_REGISTRY)


def make_drift(name: str, **params) -> DriftField:
    try:
        ctor = _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown drift {name!r}; registry has: {known}") from None
    return ctor(**params)
