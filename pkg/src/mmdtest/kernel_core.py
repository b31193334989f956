"""Closed-form Gaussian-kernel quantities.

Everything here assumes the kernel ``k(x, y) = exp(-sigma * ||x - y||^2)`` on
R^d. The mean embedding of N(m, S) under this kernel is

    mu(x) = |I + 2 sigma S|^{-1/2} exp(-sigma (x - m)^T (I + 2 sigma S)^{-1} (x - m))

and the centred influence function ``f(x)`` of the statistic has the RKHS
inner product implemented by :func:`f_inner` (scalar, literal) and
:func:`f_inner_pairs` / :func:`f_gram` (vectorised).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


class InternalInvariantError(RuntimeError):
    """A matrix that must be positive definite failed to factor."""


def _as_vector(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector and covariance matrix of a d-variate Gaussian.

    The covariance is symmetrised on construction. ``check=False`` skips the
    eigenvalue PSD audit, for covariances that are PSD by construction.
    """

    mean: np.ndarray
    cov: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"cov must be {d}x{d}, got shape {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("mean and cov must be finite")
        cov = 0.5 * (cov + cov.T)
        if self.check and d > 0:
            scale = max(np.abs(cov).max(), np.finfo(float).tiny)
            lo = np.linalg.eigvalsh(cov)[0]
            if lo < -1e-10 * scale:
                raise ValueError(f"cov is not positive semidefinite (min eigenvalue {lo:.3g})")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def standard(cls, d: int) -> "GaussianParams":
        return cls(np.zeros(d), np.eye(d), check=False)


@dataclass(frozen=True)
class KernelConfig:
    """Kernel scale plus the rule that produced it.

    ``rule`` is one of ``"explicit"``, ``"median_heuristic"`` or
    ``"dim_power"`` (with ``exponent`` set).
    """

    sigma: float
    rule: str = "explicit"
    exponent: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.rule not in ("explicit", "median_heuristic", "dim_power"):
            raise ValueError(f"unknown bandwidth rule {self.rule!r}")
        if self.rule == "dim_power" and self.exponent is None:
            raise ValueError("dim_power rule needs an exponent")


def _cholesky(mat, what):
    try:
        return linalg.cholesky(mat, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise InternalInvariantError(f"Cholesky of {what} failed; covariance is not PSD") from exc


def _logdet(chol):
    return 2.0 * np.sum(np.log(np.diag(chol)))


@dataclass(frozen=True)
class EmbeddingContext:
    """Cached factorisations of ``V = I + 2 sigma S`` and ``2V - I = I + 4 sigma S``."""

    params: GaussianParams
    sigma: float
    v_matrix: np.ndarray
    chol_v: np.ndarray
    logdet_v: float
    chol_v_plus: np.ndarray
    logdet_v_plus: float

    @classmethod
    def build(cls, params: GaussianParams, sigma: float) -> "EmbeddingContext":
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        d = params.d
        eye = np.eye(d)
        v = eye + 2.0 * sigma * params.cov
        w = eye + 4.0 * sigma * params.cov
        chol_v = _cholesky(v, "V")
        chol_w = _cholesky(w, "2V - I")
        return cls(params, float(sigma), v, chol_v, _logdet(chol_v), chol_w, _logdet(chol_w))

    @property
    def d(self) -> int:
        return self.params.d

    def solve_v(self, b):
        return linalg.cho_solve((self.chol_v, True), b, check_finite=False)

    def solve_v_plus(self, b):
        return linalg.cho_solve((self.chol_v_plus, True), b, check_finite=False)

    def whiten_v(self, b):
        """``L_V^{-1} b``; columns of ``b`` are vectors."""
        return linalg.solve_triangular(self.chol_v, b, lower=True, check_finite=False)

    def whiten_v_plus(self, b):
        return linalg.solve_triangular(self.chol_v_plus, b, lower=True, check_finite=False)


def _check_dim(x, d, name):
    if x.shape[-1] != d:
        raise ValueError(f"{name} has dimension {x.shape[-1]}, expected {d}")


def gaussian_kernel(x, y, sigma: float) -> float:
    """exp(-sigma * ||x - y||^2)."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = x - y
    return float(np.exp(-sigma * diff @ diff))


def embed_gaussian(ctx: EmbeddingContext, point) -> float:
    """Mean embedding of N(m, S) evaluated at ``point``."""
    point = _as_vector(point, "point")
    _check_dim(point, ctx.d, "point")
    z = ctx.whiten_v(point - ctx.params.mean)
    return float(np.exp(-0.5 * ctx.logdet_v - ctx.sigma * (z @ z)))


def embedding_norm_sq(params: GaussianParams, sigma: float) -> float:
    """Squared RKHS norm of the mean embedding, |I + 4 sigma S|^{-1/2}."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    w = np.eye(params.d) + 4.0 * sigma * params.cov
    return float(np.exp(-0.5 * _logdet(_cholesky(w, "I + 4 sigma S"))))


def b_matrix(x, params: GaussianParams) -> np.ndarray:
    """(x - m)(x - m)^T - S."""
    x = _as_vector(x, "x")
    _check_dim(x, params.d, "x")
    u = x - params.mean
    return np.outer(u, u) - params.cov


def f_inner(ctx: EmbeddingContext, x, y) -> float:
    """<f(x), f(y)> written term by term from the closed form.

    This is the reference (O(d^3)) evaluation used to check the vectorised
    routes; use :func:`f_gram` or :func:`f_inner_pairs` for bulk work.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    _check_dim(x, ctx.d, "x")
    _check_dim(y, ctx.d, "y")
    sigma = ctx.sigma
    m0 = ctx.params.mean
    s0 = ctx.params.cov
    eye = np.eye(ctx.d)
    ux = x - m0
    uy = y - m0
    bx = b_matrix(x, ctx.params)
    by = b_matrix(y, ctx.params)
    det_v = np.exp(-0.5 * ctx.logdet_v)
    det_w = np.exp(-0.5 * ctx.logdet_v_plus)

    kern = np.exp(-sigma * np.sum((x - y) ** 2))

    def cross(ua, ub, ba, bb):
        vinv_ua = ctx.solve_v(ua)
        inner = 2.0 * sigma * ctx.solve_v(ba + s0).T - eye  # {2 sigma (B_a + S) V^{-1} - I}
        trace = np.trace(ctx.solve_v(inner @ bb))
        brace = 1.0 + 2.0 * sigma * (vinv_ua @ ub) + sigma * trace
        return det_v * np.exp(-sigma * (ua @ vinv_ua)) * brace

    winv_bx = ctx.solve_v_plus(bx)
    winv_by = ctx.solve_v_plus(by)
    lin = np.trace(ctx.solve_v_plus(2.0 * np.outer(ux, uy) - bx - by))
    quad = np.trace(winv_bx) * np.trace(winv_by) + 2.0 * np.trace(winv_bx @ winv_by)
    last = det_w * (1.0 + sigma * lin + sigma**2 * quad)

    return float(kern - cross(ux, uy, bx, by) - cross(uy, ux, by, bx) + last)


@dataclass(frozen=True)
class _PointFeatures:
    # Per-point quadratic forms; see _features.
    zv: np.ndarray  # L_V^{-1} u, shape (n, d)
    zw: np.ndarray  # L_W^{-1} u
    sqnorm: np.ndarray  # ||x||^2
    p: np.ndarray  # u^T V^{-1} u
    q: np.ndarray  # u^T V^{-1} S V^{-1} u
    s: np.ndarray  # u^T W^{-1} u
    r: np.ndarray  # u^T W^{-1} S W^{-1} u


def _features(ctx: EmbeddingContext, pts):
    u = pts - ctx.params.mean
    s0 = ctx.params.cov
    zv = ctx.whiten_v(u.T).T
    zw = ctx.whiten_v_plus(u.T).T
    yv = ctx.solve_v(u.T).T
    yw = ctx.solve_v_plus(u.T).T
    return _PointFeatures(
        zv=zv,
        zw=zw,
        sqnorm=np.einsum("ij,ij->i", pts, pts),
        p=np.einsum("ij,ij->i", zv, zv),
        q=np.einsum("ij,jk,ik->i", yv, s0, yv),
        s=np.einsum("ij,ij->i", zw, zw),
        r=np.einsum("ij,jk,ik->i", yw, s0, yw),
    )


def _trace_consts(ctx):
    s0 = ctx.params.cov
    t_v = np.trace(ctx.solve_v(s0))
    a_w = ctx.solve_v_plus(s0)
    return t_v, np.trace(a_w), np.sum(a_w * a_w.T)


def _combine(ctx, sqdist, a, b, fx, fy, consts):
    # fx/fy fields broadcast against a and b (pairwise or gram layout).
    sigma = ctx.sigma
    t_v, t_w, t_w2 = consts
    det_v = np.exp(-0.5 * ctx.logdet_v)
    det_w = np.exp(-0.5 * ctx.logdet_v_plus)
    px, py, qx, qy, sx, sy, rx, ry = fx.p, fy.p, fx.q, fy.q, fx.s, fy.s, fx.r, fy.r

    kern = np.exp(-sigma * sqdist)
    sq = sigma * sigma
    brace_x = 1.0 + 2.0 * sigma * a + sigma * (2.0 * sigma * a * a - 2.0 * sigma * qx - py + t_v)
    brace_y = 1.0 + 2.0 * sigma * a + sigma * (2.0 * sigma * a * a - 2.0 * sigma * qy - px + t_v)
    cross = det_v * (np.exp(-sigma * px) * brace_x + np.exp(-sigma * py) * brace_y)
    tx = sx - t_w
    ty = sy - t_w
    last = det_w * (
        1.0 + sigma * (2.0 * b - tx - ty) + sq * (tx * ty + 2.0 * (b * b - rx - ry + t_w2))
    )
    return kern - cross + last


def f_inner_pairs(ctx: EmbeddingContext, xs, ys) -> np.ndarray:
    """Row-wise <f(xs[i]), f(ys[i])> for two (n, d) arrays."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape != ys.shape:
        raise ValueError(f"shape mismatch: {xs.shape} vs {ys.shape}")
    _check_dim(xs, ctx.d, "xs")
    fx = _features(ctx, xs)
    fy = fx if ys is xs else _features(ctx, ys)
    sqdist = np.maximum(fx.sqnorm + fy.sqnorm - 2.0 * np.einsum("ij,ij->i", xs, ys), 0.0)
    if ys is xs:
        sqdist = np.zeros(xs.shape[0])
    a = np.einsum("ij,ij->i", fx.zv, fy.zv)
    b = np.einsum("ij,ij->i", fx.zw, fy.zw)
    return _combine(ctx, sqdist, a, b, fx, fy, _trace_consts(ctx))


def f_diag(ctx: EmbeddingContext, xs) -> np.ndarray:
    """<f(x), f(x)> for every row of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    return f_inner_pairs(ctx, xs, xs)


class _Col:
    # Reshapes per-point features into an (n, 1) column for gram broadcasting.
    def __init__(self, feats):
        for name in ("p", "q", "s", "r"):
            setattr(self, name, getattr(feats, name)[:, None])


class _Row:
    def __init__(self, feats):
        for name in ("p", "q", "s", "r"):
            setattr(self, name, getattr(feats, name)[None, :])


def f_gram(ctx: EmbeddingContext, xs) -> np.ndarray:
    """Symmetric matrix [<f(x_i), f(x_j)>] over the rows of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    _check_dim(xs, ctx.d, "xs")
    feats = _features(ctx, xs)
    sqdist = np.maximum(feats.sqnorm[:, None] + feats.sqnorm[None, :] - 2.0 * xs @ xs.T, 0.0)
    np.fill_diagonal(sqdist, 0.0)
    a = feats.zv @ feats.zv.T
    b = feats.zw @ feats.zw.T
    gram = _combine(ctx, sqdist, a, b, _Col(feats), _Row(feats), _trace_consts(ctx))
    return 0.5 * (gram + gram.T)
