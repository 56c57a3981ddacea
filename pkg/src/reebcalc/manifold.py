"""Manifold representations: coordinate boxes and ambient level sets.

A chart box is a product of intervals, each possibly periodic or carrying
boundary faces.  A level set lives in an ambient box one dimension up and
is cut out by ``F = c``; all its fields keep ambient coefficient
representations and vector arguments are projected onto the tangent space
before evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import expr as ex


class ManifoldError(ValueError):
    pass


@dataclass(frozen=True)
class CoordSpec:
    """One chart coordinate: finite/infinite interval or a circle."""

    name: str
    lo: float = -np.inf
    hi: float = np.inf
    period: float | None = None
    boundary_lo: bool = False
    boundary_hi: bool = False

    def __post_init__(self):
        if self.period is not None and self.period <= 0:
            raise ManifoldError(f"coordinate {self.name}: period must be positive")
        if self.lo >= self.hi:
            raise ManifoldError(f"coordinate {self.name}: empty interval")


class ManifoldRep:
    """Common interface of chart boxes and level sets."""

    kind = None

    @property
    def n_sym(self):
        """Number of coordinate symbols fields are written in."""
        return len(self.coords)

    def parse(self, text):
        return ex.parse(text, self.coords)

    def tangent_basis(self, points):
        """Deterministic tangent frames, shape (N, dim, n_sym)."""
        raise NotImplementedError

    def oriented_frames(self, points):
        """Tangent frames whose orientation is the declared one."""
        raise NotImplementedError


class ChartBox(ManifoldRep):
    kind = "chart-box"

    def __init__(self, specs, collar=0.0):
        self.specs = tuple(specs)
        if not self.specs:
            raise ManifoldError("need at least one coordinate")
        self.coords = tuple(s.name for s in self.specs)
        if len(set(self.coords)) != len(self.coords):
            raise ManifoldError("duplicate coordinate names")
        self.dim = len(self.specs)
        self.collar = float(collar)

    def __repr__(self):
        return f"ChartBox({', '.join(self.coords)})"

    @property
    def has_boundary(self):
        return any(s.boundary_lo or s.boundary_hi for s in self.specs)

    def boundary_faces(self):
        faces = []
        for i, s in enumerate(self.specs):
            if s.boundary_lo:
                faces.append((i, "lo", s.lo))
            if s.boundary_hi:
                faces.append((i, "hi", s.hi))
        return faces

    def reduce_point(self, p):
        """Wrap periodic coordinates into their fundamental interval."""
        q = np.array(p, dtype=np.float64)
        for i, s in enumerate(self.specs):
            if s.period is not None:
                q[i] = s.lo + (q[i] - s.lo) % s.period
        return q

    def contains(self, p, tol=1e-9):
        q = self.reduce_point(p)
        for i, s in enumerate(self.specs):
            if s.period is None and not (s.lo - self.collar - tol <= q[i] <= s.hi + self.collar + tol):
                return False
        return True

    def sample_points(self, n, seed=0):
        sampler = qmc.Halton(d=self.dim, scramble=True, seed=seed)
        u = sampler.random(n)
        pts = np.empty((n, self.dim))
        for i, s in enumerate(self.specs):
            lo = s.lo if np.isfinite(s.lo) else -1.0
            hi = s.lo + s.period if s.period is not None else (s.hi if np.isfinite(s.hi) else 1.0)
            pts[:, i] = lo + u[:, i] * (hi - lo)
        return pts

    def sample_boundary(self, n_per_face, seed=0):
        """Quasi-random points on every boundary-flagged face."""
        out = []
        for face_id, (i, side, bound) in enumerate(self.boundary_faces()):
            sampler = qmc.Halton(d=self.dim, scramble=True, seed=seed + 7 * face_id)
            u = sampler.random(n_per_face)
            pts = np.empty((n_per_face, self.dim))
            for j, s in enumerate(self.specs):
                lo = s.lo if np.isfinite(s.lo) else -1.0
                hi = s.lo + s.period if s.period is not None else (s.hi if np.isfinite(s.hi) else 1.0)
                pts[:, j] = lo + u[:, j] * (hi - lo)
            pts[:, i] = bound
            out.append(pts)
        return np.vstack(out) if out else np.empty((0, self.dim))

    def tangent_basis(self, points):
        points = np.atleast_2d(points)
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, (points.shape[0], self.dim, self.dim)).copy()

    def oriented_frames(self, points):
        return self.tangent_basis(points)

    def project_vectors(self, points, vectors):
        return np.asarray(vectors, dtype=np.float64)


class LevelSet(ManifoldRep):
    """Level set {F = c} in an ambient box, with tangent projector rule."""

    kind = "ambient-level-set"

    def __init__(self, coords, constraint, value, ambient_box, collar=0.0):
        self.coords = tuple(coords)
        self.dim = len(self.coords) - 1
        if self.dim < 1:
            raise ManifoldError("level set needs ambient dimension >= 2")
        self.constraint = constraint if isinstance(constraint, ex.Expr) else self.parse(constraint)
        self.value = float(value)
        self.ambient_box = np.asarray(ambient_box, dtype=np.float64)
        if self.ambient_box.shape != (len(self.coords), 2):
            raise ManifoldError("ambient_box must be (n_sym, 2)")
        self.collar = float(collar)
        grads = [ex.diff(self.constraint, name) for name in self.coords]
        from .engine import compile_tape
        self._f_tape = compile_tape([self.constraint], self.coords)
        self._grad_tape = compile_tape(grads, self.coords)

    def __repr__(self):
        return f"LevelSet({', '.join(self.coords)}; F={self.constraint})"

    @property
    def has_boundary(self):
        return False

    def boundary_faces(self):
        return []

    def reduce_point(self, p):
        return np.array(p, dtype=np.float64)

    def constraint_values(self, points):
        return self._f_tape.evaluate(np.atleast_2d(points))[:, 0] - self.value

    def gradients(self, points):
        g = self._grad_tape.evaluate(np.atleast_2d(points))
        norms = np.linalg.norm(g, axis=1)
        if np.any(norms < 1e-12):
            raise ManifoldError("constraint gradient vanishes at an evaluation point")
        return g

    def contains(self, p, tol=1e-9):
        return abs(float(self.constraint_values(np.atleast_2d(p))[0])) <= tol

    def project_point(self, p, tol=1e-13, max_iter=30):
        """Newton-project ``p`` onto the level set along the gradient."""
        q = np.array(p, dtype=np.float64)
        for _ in range(max_iter):
            r = float(self.constraint_values(q[None, :])[0])
            if abs(r) <= tol:
                return q
            g = self.gradients(q[None, :])[0]
            q = q - r * g / float(g @ g)
        return q

    def sample_points(self, n, seed=0):
        sampler = qmc.Halton(d=len(self.coords), scramble=True, seed=seed)
        u = sampler.random(n)
        lo, hi = self.ambient_box[:, 0], self.ambient_box[:, 1]
        raw = lo + u * (hi - lo)
        pts = np.empty_like(raw)
        for i in range(n):
            pts[i] = self.project_point(raw[i])
        return pts

    def project_vectors(self, points, vectors):
        """Tangent projection P(p) = Id - grad F grad F^T / |grad F|^2.

        ``vectors`` is (N, m) or (N, k, m), matched to ``points`` (N, m).
        """
        points = np.atleast_2d(points)
        vectors = np.asarray(vectors, dtype=np.float64)
        g = self.gradients(points)
        gg = np.einsum("ni,ni->n", g, g)
        if vectors.ndim == 2:
            coeff = np.einsum("ni,ni->n", vectors, g) / gg
            return vectors - coeff[:, None] * g
        coeff = np.einsum("nki,ni->nk", vectors, g) / gg[:, None]
        return vectors - coeff[:, :, None] * g[:, None, :]

    def tangent_basis(self, points):
        points = np.atleast_2d(points)
        n, m = points.shape[0], len(self.coords)
        g = self.gradients(points)
        frames = np.empty((n, self.dim, m))
        for i in range(n):
            normal = g[i] / np.linalg.norm(g[i])
            basis = []
            for axis in range(m):
                v = np.zeros(m)
                v[axis] = 1.0
                v -= (v @ normal) * normal
                for b in basis:
                    v -= (v @ b) * b
                norm = np.linalg.norm(v)
                if norm > 0.25:
                    basis.append(v / norm)
                if len(basis) == self.dim:
                    break
            if len(basis) < self.dim:
                raise ManifoldError("failed to build tangent basis")
            frames[i] = np.array(basis)
        return frames

    def oriented_frames(self, points):
        """Frames e with det(normal, e_1, ..., e_dim) > 0."""
        points = np.atleast_2d(points)
        frames = self.tangent_basis(points)
        g = self.gradients(points)
        for i in range(points.shape[0]):
            normal = g[i] / np.linalg.norm(g[i])
            mat = np.vstack([normal[None, :], frames[i]])
            if np.linalg.det(mat) < 0:
                frames[i][[0, 1]] = frames[i][[1, 0]]
        return frames


@dataclass(frozen=True)
class Point:
    """A point with an on-manifold validity check."""

    coordinates: tuple

    def __init__(self, coordinates, manifold=None, tol=1e-9):
        coords = tuple(float(c) for c in np.asarray(coordinates).ravel())
        if manifold is not None:
            if len(coords) != manifold.n_sym:
                raise ManifoldError(
                    f"point has {len(coords)} coordinates, expected {manifold.n_sym}")
            if not manifold.contains(np.array(coords), tol=tol):
                raise ManifoldError(f"point {coords} is not on the manifold")
        object.__setattr__(self, "coordinates", coords)

    def array(self):
        return np.array(self.coordinates, dtype=np.float64)


def box(names, lo, hi, periodic=(), boundary=False, collar=0.0):
    """Convenience chart-box builder with uniform bounds."""
    names = tuple(names)
    specs = []
    for name in names:
        per = (hi - lo) if name in periodic else None
        specs.append(CoordSpec(name, lo, hi, period=per,
                               boundary_lo=boundary and per is None,
                               boundary_hi=boundary and per is None))
    return ChartBox(specs, collar=collar)
