"""Periodic 4-grids, collocated form fields and the discrete exterior derivative.

A k-form field stores ``C(4, k)`` scalar arrays on the grid points.  The
exterior derivative uses centered differences along each axis; these
commute and are antisymmetric, so ``d o d = 0`` and the transpose of ``d``
is again a centered-difference operator.  With odd point counts the only
periodic functions killed by a centered difference are the constants.

Internally the operators act on raw arrays of shape ``(B, C, n1, n2, n3, n4)``
where ``B`` is a batch axis; :class:`FormField` wraps a single field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

from . import fiber


@dataclass(frozen=True)
class Grid:
    """Periodic grid with ``n[i]`` points over period ``L[i]`` along axis ``i``."""

    n: tuple[int, int, int, int]
    L: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        L = tuple(float(v) for v in self.L)
        if len(n) != 4 or len(L) != 4:
            raise ValueError("grid needs exactly 4 sizes and 4 periods")
        bad = [v for v in n if v < 3 or v % 2 == 0]
        if bad:
            raise ValueError(f"grid sizes must be odd integers >= 3, got {list(n)}")
        if any(v <= 0 for v in L):
            raise ValueError(f"periods must be positive, got {list(L)}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)

    @classmethod
    def cube(cls, n: int, L: float = 1.0) -> "Grid":
        return cls((n,) * 4, (L,) * 4)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.n

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.L, self.n))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def coords(self) -> tuple[np.ndarray, ...]:
        axes = [np.arange(n) * h for n, h in zip(self.n, self.h)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


def ncomp(k: int) -> int:
    return comb(4, k)


def _d_table(k: int):
    """For each output (k+1)-index: list of (axis, sign, input component)."""
    index = {I: q for q, I in enumerate(fiber.BASIS[k])}
    table = []
    for I in fiber.BASIS[k + 1]:
        terms = []
        for pos, axis in enumerate(I):
            rest = I[:pos] + I[pos + 1:]
            terms.append((axis, (-1) ** pos, index[rest]))
        table.append(terms)
    return table


D_TABLE = {k: _d_table(k) for k in range(4)}


def centered_diff(y: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered difference of ``y`` (shape ``(B, n1..n4)``) along grid ``axis``."""
    a = axis + 1
    return (np.roll(y, -1, axis=a) - np.roll(y, 1, axis=a)) * (0.5 / h)


def d_raw(x: np.ndarray, k: int, h) -> np.ndarray:
    out = np.zeros((x.shape[0], ncomp(k + 1)) + x.shape[2:])
    for p, terms in enumerate(D_TABLE[k]):
        for axis, sign, q in terms:
            term = centered_diff(x[:, q], axis, h[axis])
            if sign > 0:
                out[:, p] += term
            else:
                out[:, p] -= term
    return out


def dT_raw(y: np.ndarray, k: int, h) -> np.ndarray:
    """Euclidean transpose of ``d`` on k-forms, applied to (k+1)-form data ``y``."""
    out = np.zeros((y.shape[0], ncomp(k)) + y.shape[2:])
    for p, terms in enumerate(D_TABLE[k]):
        for axis, sign, q in terms:
            term = centered_diff(y[:, p], axis, h[axis])
            if sign > 0:
                out[:, q] -= term
            else:
                out[:, q] += term
    return out


def pointwise(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply pointwise matrices ``M`` (``(c, d)`` or ``(c, d, n1..n4)``) to batch data."""
    if M.ndim == 2:
        return np.einsum("cd,bd...->bc...", M, x)
    out = np.zeros((x.shape[0], M.shape[0]) + x.shape[2:])
    for c in range(M.shape[0]):
        for d in range(M.shape[1]):
            out[:, c] += M[c, d] * x[:, d]
    return out


def to_pointwise(M: np.ndarray) -> np.ndarray:
    """Move trailing matrix axes of a ``(n1..n4, c, d)`` field to the front."""
    return np.moveaxis(M, (-2, -1), (0, 1)) if M.ndim > 2 else M


def from_fiber_layout(a: np.ndarray) -> np.ndarray:
    """``(n1..n4, c)`` fiber layout to ``(c, n1..n4)`` field layout."""
    return np.moveaxis(a, -1, 0)


def to_fiber_layout(a: np.ndarray) -> np.ndarray:
    return np.moveaxis(a, 0, -1)


@dataclass
class FormField:
    """A degree-k differential form on a periodic grid."""

    grid: Grid
    degree: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0 <= self.degree <= 4:
            raise ValueError(f"degree must be in 0..4, got {self.degree}")
        self.data = np.asarray(self.data, dtype=float)
        expected = (ncomp(self.degree),) + self.grid.shape
        if self.data.shape != expected:
            raise ValueError(f"degree-{self.degree} field needs shape {expected}, got {self.data.shape}")

    @classmethod
    def zeros(cls, grid: Grid, degree: int) -> "FormField":
        return cls(grid, degree, np.zeros((ncomp(degree),) + grid.shape))

    @classmethod
    def constant(cls, grid: Grid, degree: int, coeffs) -> "FormField":
        coeffs = np.asarray(coeffs, dtype=float).reshape(ncomp(degree), 1, 1, 1, 1)
        return cls(grid, degree, np.broadcast_to(coeffs, (ncomp(degree),) + grid.shape).copy())

    @classmethod
    def from_fiber(cls, grid: Grid, values: np.ndarray) -> "FormField":
        """Build from pointwise coefficients of shape ``(n1..n4, C)``."""
        values = np.asarray(values, dtype=float)
        degree = {1: 0, 4: 1, 6: 2}.get(values.shape[-1])
        if degree is None:
            raise ValueError("cannot infer degree from component count; use the constructor")
        return cls(grid, degree, from_fiber_layout(values).copy())

    @property
    def fiber(self) -> np.ndarray:
        """Coefficients in pointwise layout ``(n1..n4, C)`` (a view)."""
        return to_fiber_layout(self.data)

    def _check(self, other: "FormField"):
        if other.grid != self.grid or other.degree != self.degree:
            raise ValueError("form fields live on different grids or have different degrees")

    def __add__(self, other: "FormField") -> "FormField":
        self._check(other)
        return FormField(self.grid, self.degree, self.data + other.data)

    def __sub__(self, other: "FormField") -> "FormField":
        self._check(other)
        return FormField(self.grid, self.degree, self.data - other.data)

    def __neg__(self) -> "FormField":
        return FormField(self.grid, self.degree, -self.data)

    def __mul__(self, s) -> "FormField":
        s = np.asarray(s, dtype=float)
        return FormField(self.grid, self.degree, self.data * s)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data)))

    def copy(self) -> "FormField":
        return FormField(self.grid, self.degree, self.data.copy())

    def shift(self, axis: int, steps: int) -> "FormField":
        return FormField(self.grid, self.degree, np.roll(self.data, steps, axis=axis + 1))


class MetricField:
    """Pointwise SPD metric on a grid, with cached induced form metrics.

    ``g`` is either a single ``(4, 4)`` matrix (uniform metric) or a field of
    shape ``(n1, n2, n3, n4, 4, 4)``.
    """

    def __init__(self, grid: Grid, g):
        g = fiber.check_metric(np.asarray(g, dtype=float))
        if g.ndim == 2:
            self.uniform = True
        elif g.shape == grid.shape + (4, 4):
            self.uniform = False
        else:
            raise ValueError(f"metric field shape {g.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.matrix = g
        self.volume_density = np.sqrt(np.linalg.det(g))
        self.is_identity = self.uniform and np.array_equal(g, np.eye(4))

    @classmethod
    def flat(cls, grid: Grid) -> "MetricField":
        return cls(grid, np.eye(4))

    def full(self) -> np.ndarray:
        """Metric as a ``(n1..n4, 4, 4)`` field."""
        if self.uniform:
            return np.broadcast_to(self.matrix, self.grid.shape + (4, 4))
        return self.matrix

    def weight(self, k: int) -> np.ndarray:
        """Pointwise ``sqrt(det g) * <.,.>_g`` on k-forms, field layout."""
        return self._weights[0][k]

    def weight_inv(self, k: int) -> np.ndarray:
        return self._weights[1][k]

    @cached_property
    def _weights(self):
        W, Winv = {}, {}
        for k in range(5):
            M = self.volume_density[..., None, None] * fiber.form_metric(self.matrix, k)
            W[k] = to_pointwise(M)
            Winv[k] = to_pointwise(np.linalg.inv(M))
        return W, Winv

    @cached_property
    def star2_matrix(self) -> np.ndarray:
        return to_pointwise(fiber.star_matrix(self.matrix, 2))

    def star_matrix(self, k: int) -> np.ndarray:
        return to_pointwise(fiber.star_matrix(self.matrix, k))


def _batch(a: FormField) -> np.ndarray:
    return a.data[None]


def ext_d(grid: Grid, a: FormField) -> FormField:
    """Discrete exterior derivative with centered differences."""
    if a.degree >= 4:
        raise ValueError("exterior derivative of a 4-form is not defined here (degree must be <= 3)")
    return FormField(grid, a.degree + 1, d_raw(_batch(a), a.degree, grid.h)[0])


def inner_raw(g: MetricField, k: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched L2 inner product; returns one value per batch entry."""
    Wy = y if g.is_identity else pointwise(g.weight(k), y)
    return np.sum((x * Wy).reshape(x.shape[0], -1), axis=1) * g.grid.cell_volume


def inner(grid: Grid, g: MetricField, a: FormField, b: FormField) -> float:
    """``sum_x <a, b>_g sqrt(det g) * cell volume``."""
    if a.degree != b.degree:
        raise ValueError(f"inner product of a {a.degree}-form with a {b.degree}-form")
    return float(inner_raw(g, a.degree, _batch(a), _batch(b))[0])


def norm(grid: Grid, g: MetricField, a: FormField) -> float:
    return float(np.sqrt(max(inner(grid, g, a, a), 0.0)))


def codiff_raw(g: MetricField, k: int, x: np.ndarray) -> np.ndarray:
    h = g.grid.h
    if g.is_identity:
        return dT_raw(x, k - 1, h)
    return pointwise(g.weight_inv(k - 1), dT_raw(pointwise(g.weight(k), x), k - 1, h))


def codiff(grid: Grid, g: MetricField, a: FormField) -> FormField:
    """Adjoint of :func:`ext_d` with respect to :func:`inner`."""
    if a.degree == 0:
        raise ValueError("codifferential of a 0-form is not defined")
    return FormField(grid, a.degree - 1, codiff_raw(g, a.degree, _batch(a))[0])


# sparse assembly for dense oracles and rank computations ---------------------

def _diff_matrix_1d(n: int, h: float) -> sp.csr_matrix:
    c = 0.5 / h
    rows = np.arange(n)
    return sp.csr_matrix(
        (np.r_[np.full(n, c), np.full(n, -c)],
         (np.r_[rows, rows], np.r_[(rows + 1) % n, (rows - 1) % n])),
        shape=(n, n))


def axis_diff_matrix(grid: Grid, axis: int) -> sp.csr_matrix:
    mats = [sp.identity(n, format="csr") for n in grid.n]
    mats[axis] = _diff_matrix_1d(grid.n[axis], grid.h[axis])
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def d_matrix(grid: Grid, k: int) -> sp.csr_matrix:
    """Sparse matrix of ``d`` on k-forms; component-major, row-major points."""
    N = grid.npoints
    D = [axis_diff_matrix(grid, i) for i in range(4)]
    blocks = [[None] * ncomp(k) for _ in range(ncomp(k + 1))]
    for p, terms in enumerate(D_TABLE[k]):
        for axis, sign, q in terms:
            blocks[p][q] = sign * D[axis]
    for p in range(ncomp(k + 1)):
        for q in range(ncomp(k)):
            if blocks[p][q] is None:
                blocks[p][q] = sp.csr_matrix((N, N))
    return sp.bmat(blocks, format="csr")


def frame_matrix(frame: np.ndarray) -> sp.csr_matrix:
    """Sparse embedding of pointwise frame coefficients into form coefficients.

    ``frame`` has shape ``(n1..n4, m, C)``: ``m`` frame forms with ``C``
    components each.  The returned matrix maps ``m*N`` coefficients to
    ``C*N`` form components.
    """
    m, C = frame.shape[-2:]
    N = int(np.prod(frame.shape[:-2]))
    F = frame.reshape(N, m, C)
    pts = np.arange(N)
    rows, cols, vals = [], [], []
    for c in range(C):
        for j in range(m):
            rows.append(c * N + pts)
            cols.append(j * N + pts)
            vals.append(F[:, j, c])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(C * N, m * N))


def band_limited(grid: Grid, ncomponents: int, rng: np.random.Generator,
                 kmax: int = 1, nmodes: int = 6) -> np.ndarray:
    """Random trigonometric polynomial field with wavenumbers ``|k_i| <= kmax``.

    Returns shape ``(ncomponents, n1..n4)``, normalized to max-abs 1 per call.
    """
    X = grid.coords()
    out = np.zeros((ncomponents,) + grid.shape)
    for c in range(ncomponents):
        for _ in range(nmodes):
            kvec = rng.integers(-kmax, kmax + 1, size=4)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.normal()
            arg = sum(2 * np.pi * kvec[i] * X[i] / grid.L[i] for i in range(4))
            out[c] += amp * np.cos(arg + phase)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out
