"""Differential forms and vector fields with expression coefficients.

Coefficients are stored on strictly increasing multi-indices over the
manifold's coordinate symbols (ambient symbols for level sets), with
antisymmetry implicit.  The exterior derivative differentiates coefficient
expressions exactly, so ``d(d(a))`` is the structurally zero form.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from . import expr as ex
from .engine import compile_tape
from .manifold import LevelSet, ManifoldError, Point


class DegreeError(ValueError):
    """Raised when an operation receives a form of unusable degree."""


def _merge_index(i, index):
    """Insert axis i into the increasing tuple; returns (sign, tuple) or None."""
    if i in index:
        return None
    pos = sum(1 for j in index if j < i)
    merged = index[:pos] + (i,) + index[pos:]
    return (-1) ** pos, merged


def _sort_index(index):
    """Sort a repetition-free index tuple, tracking the permutation sign."""
    index = list(index)
    sign = 1
    for i in range(1, len(index)):
        j = i
        while j > 0 and index[j - 1] > index[j]:
            index[j - 1], index[j] = index[j], index[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(index)


class FormField:
    """Degree-k differential form backed by expression coefficients."""

    def __init__(self, manifold, degree, coeffs=None):
        if not 0 <= degree <= manifold.n_sym:
            raise DegreeError(f"degree {degree} out of range for {manifold!r}")
        self.manifold = manifold
        self.degree = degree
        table = {}
        for index, coeff in (coeffs or {}).items():
            index = tuple(index)
            if len(index) != degree or list(index) != sorted(set(index)):
                raise ValueError(f"index {index} is not strictly increasing of length {degree}")
            if not isinstance(coeff, ex.Expr):
                coeff = ex._coerce(coeff)
            if not coeff.is_zero:
                table[index] = coeff
        self.coeffs = table
        self._tape = None

    # constructors ------------------------------------------------------------
    @classmethod
    def zero(cls, manifold, degree):
        return cls(manifold, degree)

    @classmethod
    def function(cls, manifold, coeff):
        return cls(manifold, 0, {(): coeff})

    @classmethod
    def one_form(cls, manifold, components):
        return cls(manifold, 1, {(i,): c for i, c in enumerate(components)})

    @property
    def is_zero(self):
        return not self.coeffs

    def indices(self):
        return sorted(self.coeffs)

    def coefficient(self, index):
        sign, index = _sort_index(tuple(index))
        return sign * self.coeffs.get(index, ex.ZERO)

    def __repr__(self):
        if self.is_zero:
            return f"FormField<deg {self.degree}>(0)"
        names = self.manifold.coords
        parts = []
        for index in self.indices():
            basis = "^".join(f"d{names[i]}" for i in index) or "1"
            parts.append(f"({self.coeffs[index]}) {basis}".strip())
        return f"FormField<deg {self.degree}>(" + " + ".join(parts) + ")"

    # algebra ----------------------------------------------------------------
    def _check_same(self, other):
        if self.manifold is not other.manifold or self.degree != other.degree:
            raise ValueError("form mismatch (manifold or degree)")

    def __add__(self, other):
        self._check_same(other)
        table = dict(self.coeffs)
        for index, c in other.coeffs.items():
            table[index] = table.get(index, ex.ZERO) + c
        return FormField(self.manifold, self.degree, table)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return FormField(self.manifold, self.degree,
                         {i: -c for i, c in self.coeffs.items()})

    def scale(self, factor):
        """Multiply by a scalar (number or expression)."""
        if not isinstance(factor, ex.Expr):
            factor = ex._coerce(factor)
        return FormField(self.manifold, self.degree,
                         {i: factor * c for i, c in self.coeffs.items()})

    def __eq__(self, other):
        if not isinstance(other, FormField):
            return NotImplemented
        return (self.manifold is other.manifold and self.degree == other.degree
                and self.coeffs == other.coeffs)

    # evaluation ---------------------------------------------------------------
    def _coefficient_tape(self):
        if self._tape is None:
            order = self.indices()
            self._tape = (order, compile_tape([self.coeffs[i] for i in order],
                                              self.manifold.coords))
        return self._tape

    def coefficient_values(self, points, backend=None):
        """Evaluate all stored coefficients; returns (index order, (N, C))."""
        order, tape = self._coefficient_tape()
        return order, tape.evaluate(points, backend=backend)

    def evaluate(self, frame, backend=None):
        """Value on a k-frame (multilinear, alternating)."""
        point = frame.point_array()
        vectors = frame.matrix()
        if vectors.shape[0] != self.degree:
            raise DegreeError(
                f"frame arity {vectors.shape[0]} != form degree {self.degree}")
        if isinstance(self.manifold, LevelSet):
            vectors = self.manifold.project_vectors(point[None, :], vectors[None, :, :])[0]
        order, values = self.coefficient_values(point[None, :], backend=backend)
        total = 0.0
        for idx, c in zip(order, values[0]):
            det = np.linalg.det(vectors[:, idx]) if self.degree else 1.0
            total += c * det
        return float(total)

    def evaluate_on_frames(self, points, frames, backend=None):
        """Batch form values; ``frames`` has shape (N, k, n_sym)."""
        points = np.atleast_2d(points)
        frames = np.asarray(frames, dtype=np.float64)
        if self.is_zero:
            return np.zeros(points.shape[0])
        if self.degree == 0:
            _, values = self.coefficient_values(points, backend=backend)
            return values[:, 0]
        if isinstance(self.manifold, LevelSet):
            frames = self.manifold.project_vectors(points, frames)
        order, values = self.coefficient_values(points, backend=backend)
        total = np.zeros(points.shape[0])
        for col, idx in enumerate(order):
            total += values[:, col] * np.linalg.det(frames[:, :, idx])
        return total


class VectorField:
    """Vector field with one component expression per coordinate symbol."""

    def __init__(self, manifold, components):
        components = [c if isinstance(c, ex.Expr) else ex._coerce(c) for c in components]
        if len(components) != manifold.n_sym:
            raise ValueError(f"expected {manifold.n_sym} components")
        self.manifold = manifold
        self.components = tuple(components)
        self._tape = None
        self._jac_tape = None

    def __repr__(self):
        return f"VectorField({', '.join(str(c) for c in self.components)})"

    @property
    def is_expression_backed(self):
        return True

    def eval_at(self, points, backend=None):
        if self._tape is None:
            self._tape = compile_tape(self.components, self.manifold.coords)
        return self._tape.evaluate(points, backend=backend)

    def jacobian_at(self, points, backend=None):
        """(N, m, m) array of d v_i / d x_j."""
        m = self.manifold.n_sym
        if self._jac_tape is None:
            entries = [ex.diff(c, name) for c in self.components
                       for name in self.manifold.coords]
            self._jac_tape = compile_tape(entries, self.manifold.coords)
        vals = self._jac_tape.evaluate(points, backend=backend)
        return vals.reshape(-1, m, m)

    def tangency_residual(self, points):
        """sup |grad F . v| at sample points (level sets only)."""
        if not isinstance(self.manifold, LevelSet):
            return 0.0
        g = self.manifold.gradients(points)
        v = self.eval_at(points)
        return float(np.max(np.abs(np.einsum("ni,ni->n", g, v))))


class PointwiseVectorField:
    """Field defined by a per-point numeric solver (no expressions)."""

    def __init__(self, manifold, func, fd_step=1e-6):
        self.manifold = manifold
        self._func = func
        self.fd_step = fd_step
        self.components = None

    @property
    def is_expression_backed(self):
        return False

    def eval_at(self, points, backend=None):
        points = np.atleast_2d(points)
        return np.array([self._func(p) for p in points], dtype=np.float64)

    def jacobian_at(self, points, backend=None):
        # central finite differences with the documented step
        points = np.atleast_2d(points)
        m = points.shape[1]
        h = self.fd_step
        out = np.empty((points.shape[0], m, m))
        for j in range(m):
            dp = np.zeros(m)
            dp[j] = h
            out[:, :, j] = (self.eval_at(points + dp) - self.eval_at(points - dp)) / (2 * h)
        return out


class FrameK:
    """An ordered tuple of tangent vectors anchored at a point."""

    def __init__(self, point, vectors, manifold=None, require_independent=True):
        if isinstance(point, Point):
            self._point = point.array()
        else:
            self._point = np.array(point, dtype=np.float64)
        self._vectors = np.array(vectors, dtype=np.float64).reshape(-1, len(self._point))
        if manifold is not None and len(self._point) != manifold.n_sym:
            raise ManifoldError("frame base point has wrong dimension")
        if require_independent and self._vectors.shape[0]:
            rank = np.linalg.matrix_rank(self._vectors, tol=1e-12)
            if rank < self._vectors.shape[0]:
                raise ValueError("frame vectors are linearly dependent")

    @property
    def arity(self):
        return self._vectors.shape[0]

    def point_array(self):
        return self._point.copy()

    def matrix(self):
        return self._vectors.copy()


# operations -------------------------------------------------------------------

def wedge(a, b):
    """Exterior product; graded-commutative and associative."""
    if a.manifold is not b.manifold:
        raise ValueError("wedge of forms on different manifolds")
    degree = a.degree + b.degree
    if degree > a.manifold.n_sym:
        raise DegreeError(
            f"wedge degree {degree} exceeds dimension {a.manifold.n_sym}")
    table = {}
    for ia, ca in a.coeffs.items():
        for ib, cb in b.coeffs.items():
            if set(ia) & set(ib):
                continue
            sign, merged = _sort_index(ia + ib)
            c = ca * cb
            if sign < 0:
                c = -c
            table[merged] = table.get(merged, ex.ZERO) + c
    return FormField(a.manifold, degree, table)


def wedge_power(a, k):
    """k-fold wedge of a form with itself (k >= 0)."""
    result = FormField.function(a.manifold, 1)
    for _ in range(k):
        result = wedge(result, a)
    return result


def interior_product(v, a):
    """Contraction of a vector field into the first slot of a form."""
    if a.degree == 0:
        raise DegreeError("cannot contract a 0-form")
    if v.components is None:
        raise ValueError("interior_product needs an expression-backed field")
    table = {}
    for index, c in a.coeffs.items():
        for pos, i in enumerate(index):
            rest = index[:pos] + index[pos + 1:]
            term = v.components[i] * c
            if pos % 2:
                term = -term
            table[rest] = table.get(rest, ex.ZERO) + term
    return FormField(a.manifold, a.degree - 1, table)


def exterior_derivative(a):
    """Symbolic d; in top ambient degree returns the zero form."""
    manifold = a.manifold
    if a.degree == manifold.n_sym:
        return FormField.zero(manifold, a.degree)
    table = {}
    for index, c in a.coeffs.items():
        for i, name in enumerate(manifold.coords):
            dc = ex.diff(c, name)
            if dc.is_zero:
                continue
            merged = _merge_index(i, index)
            if merged is None:
                continue
            sign, new_index = merged
            term = dc if sign > 0 else -dc
            table[new_index] = table.get(new_index, ex.ZERO) + term
    return FormField(manifold, a.degree + 1, table)


def lie_derivative(v, a):
    """Cartan's formula: L_v a = v . da + d(v . a)."""
    if a.degree == 0:
        return interior_product(v, exterior_derivative(a))
    if a.degree == a.manifold.n_sym:
        # top ambient degree: da = 0, only the d(v . a) term survives
        return exterior_derivative(interior_product(v, a))
    return (interior_product(v, exterior_derivative(a))
            + exterior_derivative(interior_product(v, a)))


class SmoothMap:
    """Map between manifolds given by coordinate expressions."""

    def __init__(self, source, target, components):
        components = [c if isinstance(c, ex.Expr) else ex.parse(c, source.coords)
                      for c in components]
        if len(components) != target.n_sym:
            raise ValueError(
                f"map needs {target.n_sym} components, got {len(components)}")
        self.source = source
        self.target = target
        self.components = tuple(components)
        self._subs = dict(zip(target.coords, self.components))

    @classmethod
    def identity(cls, manifold):
        return cls(manifold, manifold, [ex.var(n) for n in manifold.coords])

    def differentials(self):
        """d of every component, as source 1-forms."""
        return [FormField.one_form(self.source,
                                   [ex.diff(c, n) for n in self.source.coords])
                for c in self.components]

    def eval_at(self, points):
        tape = compile_tape(self.components, self.source.coords)
        return tape.evaluate(points)


def pullback(smooth_map, a):
    """Pullback of ``a`` (on the target) along ``smooth_map``."""
    if a.manifold is not smooth_map.target:
        raise ValueError("form does not live on the map's target manifold")
    source = smooth_map.source
    if a.degree > source.n_sym:
        return FormField.zero(source, source.n_sym)
    diffs = smooth_map.differentials()
    result = FormField.zero(source, a.degree)
    for index, c in a.coeffs.items():
        piece = FormField.function(source, ex.subs(c, smooth_map._subs))
        for i in index:
            piece = wedge(piece, diffs[i])
        result = result + piece
    return result


def form_basis_indices(n_sym, degree):
    return list(combinations(range(n_sym), degree))


def restricted_sup(a, points):
    """sup of |a| over sample points, restricted to the manifold.

    Charts use coefficient magnitudes; level sets evaluate on all
    tangent-basis tuples so ambient normal components do not count.
    """
    points = np.atleast_2d(points)
    if a.is_zero:
        return 0.0
    if a.degree == 0:
        _, values = a.coefficient_values(points)
        return float(np.max(np.abs(values)))
    if not isinstance(a.manifold, LevelSet):
        _, values = a.coefficient_values(points)
        return float(np.max(np.abs(values)))
    frames = a.manifold.tangent_basis(points)
    sup = 0.0
    for combo in combinations(range(frames.shape[1]), a.degree):
        vals = a.evaluate_on_frames(points, frames[:, combo, :])
        sup = max(sup, float(np.max(np.abs(vals))))
    return sup
