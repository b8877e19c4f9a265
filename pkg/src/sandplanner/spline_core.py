"""Clamped uniform B-splines: knots, basis, evaluation, fitting, arc length.

Control points are plain ``(N, 3)`` float arrays in the robot frame. Every
function here is pure; cached basis matrices are returned read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class SplineError(ValueError):
    """Base class for spline-level errors."""


class InvalidDimensionError(SplineError):
    pass


class DomainError(SplineError):
    pass


class IllConditionedError(SplineError):
    pass


DOMAIN_TOL = 1e-12
_TIKHONOV = 1e-8
_COND_LIMIT = 1e10


def make_clamped_uniform_knots(p: int, N: int) -> np.ndarray:
    """Clamped uniform knot vector on [0, 1] with ``N + p + 1`` entries."""
    if p < 1:
        raise InvalidDimensionError(f"degree must be >= 1, got {p}")
    if N < p + 1:
        raise InvalidDimensionError(f"need N >= p + 1 control points, got N={N}, p={p}")
    spans = N - p
    interior = np.arange(1, spans) / spans
    return np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])


@dataclass(frozen=True)
class SplineSpec:
    degree: int = 3
    control_count: int = 8
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = make_clamped_uniform_knots(self.degree, self.control_count)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.control_count])

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.degree + 1 : self.control_count]


@dataclass(frozen=True)
class Trajectory:
    """Arc-length sampled curve.

    ``s`` holds cumulative arc length per sample, ``points`` the ``(M, 3)``
    positions and ``u`` the source parameter of each sample (NaN for
    representations without one).
    """

    s: np.ndarray
    points: np.ndarray
    u: np.ndarray
    degenerate: bool = False

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def __len__(self) -> int:
        return len(self.s)


def check_control_points(spec: SplineSpec, cps) -> np.ndarray:
    Q = np.asarray(cps, dtype=float)
    if Q.shape != (spec.control_count, 3):
        raise InvalidDimensionError(
            f"expected control points of shape ({spec.control_count}, 3), got {Q.shape}"
        )
    if not np.all(np.isfinite(Q)):
        raise SplineError("control points must be finite")
    return Q


def _check_domain(spec: SplineSpec, u: np.ndarray) -> np.ndarray:
    lo, hi = spec.domain
    if np.any(u < lo - DOMAIN_TOL) or np.any(u > hi + DOMAIN_TOL) or np.any(~np.isfinite(u)):
        raise DomainError(f"parameter outside [{lo}, {hi}]")
    return np.clip(u, lo, hi)


def _basis_matrix(knots: np.ndarray, p: int, n: int, u: np.ndarray) -> np.ndarray:
    # Cox-de Boor on half-open spans; u == right end belongs to the last span.
    m = len(knots) - 1
    left, right = knots[:-1], knots[1:]
    B = ((u[:, None] >= left) & (u[:, None] < right)).astype(float)
    last = n - 1
    at_end = u >= knots[n]
    if np.any(at_end):
        B[at_end] = 0.0
        B[at_end, last] = 1.0
    for k in range(1, p + 1):
        cols = m - k
        nxt = np.zeros((len(u), cols))
        for i in range(cols):
            d1 = knots[i + k] - knots[i]
            d2 = knots[i + k + 1] - knots[i + 1]
            term = np.zeros(len(u))
            if d1 > 0:
                term += (u - knots[i]) / d1 * B[:, i]
            if d2 > 0:
                term += (knots[i + k + 1] - u) / d2 * B[:, i + 1]
            nxt[:, i] = term
        B = nxt
    return B[:, :n]


def basis_matrix(spec: SplineSpec, u) -> np.ndarray:
    """All basis values at the parameters ``u``; shape ``(len(u), N)``."""
    u = _check_domain(spec, np.atleast_1d(np.asarray(u, dtype=float)))
    return _basis_matrix(spec.knots, spec.degree, spec.control_count, u)


def basis(spec: SplineSpec, i: int, u: float) -> float:
    if not 0 <= i < spec.control_count:
        raise IndexError(f"basis index {i} out of range")
    return float(basis_matrix(spec, [u])[0, i])


@lru_cache(maxsize=32)
def _dense_basis(degree: int, count: int, samples: int) -> tuple[np.ndarray, np.ndarray]:
    spec = SplineSpec(degree, count)
    u = np.linspace(0.0, 1.0, samples)
    B = basis_matrix(spec, u)
    u.setflags(write=False)
    B.setflags(write=False)
    return u, B


def dense_basis(spec: SplineSpec, samples: int | None = None):
    """Cached ``(u, B)`` on a uniform parameter grid (default ``200 (N - p) + 1`` points)."""
    if samples is None:
        samples = 200 * (spec.control_count - spec.degree) + 1
    return _dense_basis(spec.degree, spec.control_count, samples)


def evaluate(spec: SplineSpec, cps, u) -> np.ndarray:
    """Curve position(s). Scalar ``u`` gives shape ``(3,)``, arrays give ``(len(u), 3)``."""
    Q = check_control_points(spec, cps)
    scalar = np.ndim(u) == 0
    out = basis_matrix(spec, u) @ Q
    return out[0] if scalar else out


def _hodograph(knots: np.ndarray, p: int, Q: np.ndarray):
    # Derivative of a degree-p spline is a degree-(p-1) spline on the trimmed knots.
    n = len(Q)
    denom = knots[p + 1 : p + n] - knots[1:n]
    dQ = p * (Q[1:] - Q[:-1]) / denom[:, None]
    return knots[1:-1], p - 1, dQ


def derivative(spec: SplineSpec, cps, u, order: int = 1) -> np.ndarray:
    if order not in (1, 2):
        raise ValueError(f"unsupported derivative order {order}")
    Q = check_control_points(spec, cps)
    scalar = np.ndim(u) == 0
    uu = _check_domain(spec, np.atleast_1d(np.asarray(u, dtype=float)))
    knots, p = spec.knots, spec.degree
    for _ in range(order):
        knots, p, Q = _hodograph(knots, p, Q)
    out = _basis_matrix(knots, p, len(Q), uu) @ Q
    return out[0] if scalar else out


def chord_length_params(samples: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        return np.linspace(0.0, 1.0, len(samples))
    t = np.concatenate([[0.0], np.cumsum(seg) / total])
    t[-1] = 1.0
    return t


@dataclass(frozen=True)
class SplineFit:
    control_points: np.ndarray
    rms: float
    regularized: bool = False


def fit_least_squares(spec: SplineSpec, samples, params=None) -> SplineFit:
    """Least-squares control points with the endpoints pinned to the first/last sample.

    Args:
        spec: target spline layout.
        samples: ``(K, 2 or 3)`` ordered positions along the path.
        params: optional sample parameters in [0, 1]; chord-length when omitted.

    Returns:
        The fitted control points together with the residual RMS at the samples.
    """
    P = np.asarray(samples, dtype=float)
    if P.ndim != 2 or P.shape[1] not in (2, 3):
        raise InvalidDimensionError(f"samples must be (K, 2|3), got {P.shape}")
    if P.shape[1] == 2:
        P = np.column_stack([P, np.zeros(len(P))])
    n = spec.control_count
    if len(P) < n:
        raise InvalidDimensionError(f"need at least {n} samples, got {len(P)}")

    if np.allclose(P, P[0], rtol=0.0, atol=1e-12):
        return SplineFit(np.repeat(P[:1], n, axis=0), 0.0)

    t = chord_length_params(P) if params is None else np.asarray(params, dtype=float)
    A = basis_matrix(spec, t)
    first, last = P[0], P[-1]
    rhs = P - np.outer(A[:, 0], first) - np.outer(A[:, -1], last)
    Am = A[:, 1:-1]
    # a free control point whose support holds no sample is undetermined; the
    # ridge term would silently pull it to the origin, so refuse instead
    if np.linalg.matrix_rank(Am) < Am.shape[1]:
        raise IllConditionedError("normal equations are rank deficient")
    AtA = Am.T @ Am
    regularized = False
    if np.linalg.cond(AtA) > _COND_LIMIT:
        AtA = AtA + _TIKHONOV * np.eye(len(AtA))
        regularized = True
    mid = np.linalg.solve(AtA, Am.T @ rhs)
    Q = np.vstack([first, mid, last])
    resid = A @ Q - P
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return SplineFit(Q, rms, regularized)


def _cumulative_length(dense_pts):
    seg = np.linalg.norm(np.diff(dense_pts, axis=-2), axis=-1)
    cum = np.concatenate([np.zeros(seg.shape[:-1] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    return cum


def discretize_arclength(spec: SplineSpec, cps, M: int) -> Trajectory:
    """``M`` samples equidistant in arc length, first at u=0 and last at u=1."""
    if M < 2:
        raise ValueError("M must be >= 2")
    Q = check_control_points(spec, cps)
    return discretize_many(spec, Q[None], M)[0]


def discretize_many(spec: SplineSpec, cps_batch, M: int) -> list[Trajectory]:
    """Batched :func:`discretize_arclength` for a ``(K, N, 3)`` stack."""
    if M < 2:
        raise ValueError("M must be >= 2")
    Qs = np.asarray(cps_batch, dtype=float)
    du, dB = dense_basis(spec)
    dense = np.matmul(dB, Qs)
    cum = _cumulative_length(dense)
    K = len(Qs)
    totals = cum[:, -1]
    S = np.linspace(0.0, 1.0, M)[None, :] * totals[:, None]
    U = np.empty((K, M))
    for k in range(K):
        U[k] = np.interp(S[k], cum[k], du)
    U[:, 0], U[:, -1] = 0.0, 1.0
    # one basis evaluation for the whole batch
    B = _basis_matrix(spec.knots, spec.degree, spec.control_count, U.ravel()).reshape(K, M, -1)
    P = np.matmul(B, Qs)
    out = []
    for k in range(K):
        if totals[k] < 1e-9:
            pts = np.repeat(Qs[k, :1], M, axis=0)
            out.append(Trajectory(np.zeros(M), pts, np.zeros(M), degenerate=True))
        else:
            out.append(Trajectory(S[k], P[k], U[k]))
    return out


def resample_polyline(points, M: int | None = None, spacing: float | None = None) -> Trajectory:
    """Equidistant arc-length resampling of a polyline (no source parameter)."""
    P = np.asarray(points, dtype=float)
    if P.shape[1] == 2:
        P = np.column_stack([P, np.zeros(len(P))])
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if M is None:
        M = max(2, int(np.ceil(total / spacing)) + 1)
    if total < 1e-9:
        return Trajectory(np.zeros(M), np.repeat(P[:1], M, axis=0), np.full(M, np.nan), True)
    keep = np.concatenate([[True], seg > 0])
    cum, P = cum[keep], P[keep]
    s = np.linspace(0.0, total, M)
    pts = np.column_stack([np.interp(s, cum, P[:, d]) for d in range(3)])
    return Trajectory(s, pts, np.full(M, np.nan))


def deviation_bound(spec: SplineSpec, cps_clean, cps_perturbed, dense_samples: int = 2000):
    """Max curve deviation over a dense parameter grid and max control-point error."""
    Q0 = check_control_points(spec, cps_clean)
    Q1 = check_control_points(spec, cps_perturbed)
    _, B = dense_basis(spec, dense_samples)
    path_dev = float(np.max(np.linalg.norm(B @ (Q1 - Q0), axis=1)))
    cp_err = float(np.max(np.linalg.norm(Q1 - Q0, axis=1)))
    return path_dev, cp_err


def local_support_range(spec: SplineSpec, i: int) -> tuple[float, float]:
    if not 0 <= i < spec.control_count:
        raise IndexError(f"control point index {i} out of range")
    lo, hi = spec.domain
    k = spec.knots
    return max(lo, float(k[i])), min(hi, float(k[i + spec.degree + 1]))


# serialization: 3N little-endian float64, row-major per point


def cps_to_bytes(cps) -> bytes:
    return np.ascontiguousarray(cps, dtype="<f8").tobytes()


def cps_from_bytes(data: bytes, spec: SplineSpec) -> np.ndarray:
    flat = np.frombuffer(data, dtype="<f8")
    if flat.size != 3 * spec.control_count:
        raise InvalidDimensionError(f"expected {3 * spec.control_count} values, got {flat.size}")
    return flat.reshape(spec.control_count, 3).astype(float)


def cps_to_text(cps) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(cps, dtype=float).ravel())


def cps_from_text(text: str, spec: SplineSpec) -> np.ndarray:
    flat = np.array([float(t) for t in text.split()])
    if flat.size != 3 * spec.control_count:
        raise InvalidDimensionError(f"expected {3 * spec.control_count} values, got {flat.size}")
    return flat.reshape(spec.control_count, 3)
