"""Matrix-free Krylov and subspace solvers on batched field arrays.

Vectors are arrays whose first axis is a batch axis.  An inner product is
given implicitly by a ``weigh`` callable returning ``W x``; ``None`` means
the Euclidean product.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, SpectralGapError

RANK_RTOL = 1e-6
RANK_GAP = 1e2


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _col(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (x.ndim - 1))


def dots(x: np.ndarray, y: np.ndarray, weigh=None) -> np.ndarray:
    wy = y if weigh is None else weigh(y)
    return np.sum(_flat(x) * _flat(wy), axis=1)


def gram(x: np.ndarray, y: np.ndarray, weigh=None) -> np.ndarray:
    wy = y if weigh is None else weigh(y)
    return _flat(x) @ _flat(wy).T


@dataclass
class CGInfo:
    iterations: int
    residual: np.ndarray
    history: list[float] = field(default_factory=list)


def cg(apply, b: np.ndarray, *, weigh=None, x0: np.ndarray | None = None,
       rtol: float = 1e-12, atol: float = 0.0, maxiter: int = 1000,
       name: str = "cg") -> tuple[np.ndarray, CGInfo]:
    """Conjugate gradients for each batch column of ``apply(x) = b``.

    ``apply`` must be self-adjoint and positive semidefinite in the inner
    product defined by ``weigh``.  Singular systems are fine as long as the
    right-hand side is consistent.
    """
    bnorm = np.sqrt(np.maximum(dots(b, b, weigh), 0.0))
    target = np.maximum(rtol * bnorm, atol)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b.copy() if x0 is None else b - apply(x)
    history: list[float] = []
    total = 0

    def rel(rr):
        return float(np.max(np.sqrt(np.maximum(rr, 0.0)) / np.maximum(bnorm, 1e-300)))

    for _restart in range(3):
        rr = dots(r, r, weigh)
        active = np.sqrt(np.maximum(rr, 0.0)) > target
        history.append(rel(rr))
        p = r.copy()
        while active.any() and total < maxiter:
            Ap = apply(p)
            pAp = dots(p, Ap, weigh)
            ok = active & (pAp > 0)
            alpha = np.where(ok, rr / np.where(ok, pAp, 1.0), 0.0)
            x += _col(alpha, x) * p
            r -= _col(alpha, r) * Ap
            rr_new = dots(r, r, weigh)
            beta = np.where(ok & (rr > 0), rr_new / np.where(rr > 0, rr, 1.0), 0.0)
            p = r + _col(beta, p) * p
            rr = rr_new
            total += 1
            active = ok & (np.sqrt(np.maximum(rr, 0.0)) > target)
            history.append(rel(rr))
        # recursive residuals drift; confirm against the true one
        r = b - apply(x)
        res = np.sqrt(np.maximum(dots(r, r, weigh), 0.0))
        if np.all(res <= 10 * target):
            return x, CGInfo(total, res, history)
        if total >= maxiter:
            break
    raise ConvergenceError(
        f"{name}: no convergence in {total} iterations "
        f"(relative residual {float(np.max(res / np.maximum(bnorm, 1e-300))):.3e})",
        {"iterations": total, "residual_history": history[-50:]})


def orthonormalize(Y: np.ndarray, weigh=None) -> np.ndarray:
    """Orthonormal basis (same batch count) for the span of ``Y``."""
    Q = Y
    for _ in range(2):
        G = gram(Q, Q, weigh)
        G = 0.5 * (G + G.T)
        lam, U = np.linalg.eigh(G)
        lam = np.maximum(lam, lam.max() * 1e-30)
        T = U / np.sqrt(lam)
        Q = np.tensordot(T.T, Q, axes=(1, 0))
    return Q


def power_max(apply, x0: np.ndarray, weigh=None, iters: int = 40) -> float:
    """Rayleigh-quotient estimate of the largest eigenvalue of a PSD operator."""
    x = x0[:1] / np.sqrt(dots(x0[:1], x0[:1], weigh))
    lam = 0.0
    for _ in range(iters):
        y = apply(x)
        lam = float(dots(x, y, weigh)[0])
        ny = np.sqrt(dots(y, y, weigh))
        if ny[0] == 0:
            return 0.0
        x = y / _col(ny, y)
    return lam


@dataclass
class SubspaceResult:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int


def lowest_eigenpairs(apply, X0: np.ndarray, *, weigh=None, shift: float,
                      converged, maxiter: int = 200, cg_rtol: float = 1e-10,
                      cg_maxiter: int = 5000) -> SubspaceResult:
    """Blocked inverse subspace iteration with inner CG solves.

    Iterates ``X <- (A + shift)^{-1} X`` followed by Rayleigh-Ritz until
    ``converged(eigenvalues, residuals)`` returns True.
    """
    X = orthonormalize(X0, weigh)
    theta = np.zeros(X.shape[0])

    def shifted(v):
        return apply(v) + shift * v

    res = np.full(X.shape[0], np.inf)
    for it in range(1, maxiter + 1):
        guess = X / _col(theta + shift, X) if np.all(theta + shift > 0) else None
        Y, _ = cg(shifted, X, weigh=weigh, x0=guess,
                  rtol=cg_rtol, maxiter=cg_maxiter, name="subspace inner solve")
        Q = orthonormalize(Y, weigh)
        AQ = apply(Q)
        H = gram(Q, AQ, weigh)
        theta, V = np.linalg.eigh(0.5 * (H + H.T))
        X = np.tensordot(V.T, Q, axes=(1, 0))
        AX = np.tensordot(V.T, AQ, axes=(1, 0))
        R = AX - _col(theta, X) * X
        res = np.sqrt(np.maximum(dots(R, R, weigh), 0.0))
        theta = np.maximum(theta, 0.0)
        if converged(theta, res):
            return SubspaceResult(theta, X, res, it)
    return SubspaceResult(theta, X, res, maxiter)


@dataclass
class RankReport:
    """Rank decided from a singular-value spectrum with a mandatory gap."""

    rank: int
    size: int
    sigma_max: float
    threshold: float
    below: float
    above: float
    gap_ratio: float
    tail: list[float]

    @property
    def nullity(self) -> int:
        return self.size - self.rank

    def to_dict(self) -> dict:
        return {"rank": self.rank, "nullity": self.nullity, "size": self.size,
                "sigma_max": self.sigma_max, "threshold": self.threshold,
                "largest_below": self.below, "smallest_above": self.above,
                "gap_ratio": self.gap_ratio, "spectrum_tail": self.tail}


def decide_rank(s: np.ndarray, size: int | None = None, rtol: float = RANK_RTOL,
                gap: float = RANK_GAP, what: str = "operator") -> RankReport:
    """Count singular values above ``rtol * sigma_max``.

    ``size`` is the domain dimension (defaults to ``len(s)``); singular
    values beyond ``len(s)`` are zeros.  The decision band
    ``[threshold / sqrt(gap), threshold * sqrt(gap)]`` must be empty, which
    forces at least a factor ``gap`` between counted and uncounted values.
    """
    s = np.sort(np.asarray(s, dtype=float))[::-1]
    size = len(s) if size is None else size
    smax = float(s[0]) if len(s) else 0.0
    if smax == 0.0:
        return RankReport(0, size, 0.0, 0.0, 0.0, 0.0, np.inf, [])
    tau = rtol * smax
    rank = int(np.sum(s > tau))
    above = float(s[rank - 1]) if rank else np.inf
    below = float(s[rank]) if rank < len(s) else 0.0
    ratio = above / below if below > 0 else np.inf
    lo, hi = rank - 8, rank + 8
    tail = [float(v) for v in s[max(lo, 0):min(hi, len(s))]]
    report = RankReport(rank, size, smax, tau, below, above, ratio, tail)
    band = (s > tau / np.sqrt(gap)) & (s < tau * np.sqrt(gap))
    if band.any() or ratio < gap:
        raise SpectralGapError(
            f"ambiguous rank for {what}: no factor-{gap:g} gap around threshold {tau:.3e}",
            report.to_dict())
    return report
