"""Quadrature of differential forms over parametrized chains.

Chains are integer-weighted lists of smooth patches [0,1]^k -> X given by
coordinate expressions.  Integration pulls the form back symbolically to
the reference cell and applies tensor Gauss quadrature over a uniform
subdivision; the error estimate comes from one refinement.  The cubical
boundary operator cancels shared faces combinatorially, so closedness of
a chain is a decidable check (degenerate faces are dropped by a rank test
at the quadrature nodes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .engine import compile_tape
from .forms import (DegreeError, FormField, SmoothMap, exterior_derivative,
                    interior_product, pullback, restricted_sup, wedge,
                    wedge_power)
from .manifold import ChartBox, CoordSpec, LevelSet


class ChainError(ValueError):
    pass


_PARAM_NAMES = tuple(f"u{i}" for i in range(1, 9))


def _param_box(k):
    return ChartBox([CoordSpec(_PARAM_NAMES[i], 0.0, 1.0) for i in range(k)]) \
        if k else ChartBox([CoordSpec("u1", 0.0, 1.0)])


class ParamPatch:
    """One smooth patch: reference cell [0,1]^k with an expression map."""

    def __init__(self, target, cell_dim, components, orientation=1,
                 quad_order=8, refine=1):
        if cell_dim < 0:
            raise ChainError("cell dimension must be >= 0")
        self.target = target
        self.cell_dim = cell_dim
        self.cell = _param_box(max(cell_dim, 1))
        comps = []
        for c in components:
            comps.append(c if isinstance(c, ex.Expr) else
                         ex.parse(c, self.cell.coords))
        if len(comps) != target.n_sym:
            raise ChainError(f"map needs {target.n_sym} components")
        self.map = SmoothMap(self.cell, target, comps)
        self.orientation = int(orientation)
        if self.orientation not in (-1, 1):
            raise ChainError("orientation must be +1 or -1")
        self.quad_order = int(quad_order)
        self.refine = int(refine)

    def key(self):
        return (self.cell_dim, self.orientation,
                tuple(c.pkey for c in self.map.components))

    def nodes(self, quad_order=None, refine=None):
        """Tensor Gauss nodes and weights on the subdivided cell."""
        q = quad_order or self.quad_order
        r = refine or self.refine
        x1, w1 = np.polynomial.legendre.leggauss(q)
        cells = (np.arange(r) + 0.5) / r
        pts1 = (cells[:, None] + x1[None, :] / (2 * r)).ravel()
        wts1 = np.tile(w1 / (2 * r), r)
        k = max(self.cell_dim, 1)
        grids = np.meshgrid(*([pts1] * k), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wts = np.ones(pts.shape[0])
        for i in range(k):
            w_grid = np.meshgrid(*([wts1] * k), indexing="ij")[i].ravel()
            wts *= w_grid
        return pts, wts

    def map_points(self, param_points):
        return self.map.eval_at(param_points)

    def on_manifold_residual(self, tol=1e-9):
        if not isinstance(self.target, LevelSet):
            return 0.0
        pts, _ = self.nodes()
        mapped = self.map_points(pts)
        return float(np.max(np.abs(self.target.constraint_values(mapped))))

    def jacobian_rank(self, tol=1e-9):
        """Max Jacobian rank over quadrature nodes (0-cells have rank 0)."""
        if self.cell_dim == 0:
            return 0
        pts, _ = self.nodes()
        entries = [ex.diff(c, n) for c in self.map.components
                   for n in self.cell.coords[:self.cell_dim]]
        vals = compile_tape(entries, self.cell.coords).evaluate(pts)
        jac = vals.reshape(pts.shape[0], self.target.n_sym, self.cell_dim)
        return int(max(np.linalg.matrix_rank(j, tol=1e-9) for j in jac))

    def is_degenerate(self):
        return self.cell_dim > 0 and self.jacobian_rank() < self.cell_dim

    def pullback_coefficient(self, form):
        """Pullback of a cell_dim-form to the cell; single coefficient."""
        if form.degree != self.cell_dim:
            raise DegreeError("form degree does not match the patch dimension")
        if self.cell_dim == 0:
            c = form.coeffs.get((), ex.ZERO)
            return ex.subs(c, dict(zip(self.target.coords, self.map.components)))
        pb = pullback(self.map, form)
        return pb.coeffs.get(tuple(range(self.cell_dim)), ex.ZERO)

    def integrate(self, form, quad_order=None, refine=None):
        coeff = self.pullback_coefficient(form)
        if coeff.is_zero:
            return 0.0
        pts, wts = self.nodes(quad_order, refine)
        vals = compile_tape([coeff], self.cell.coords).evaluate(pts)[:, 0]
        if self.cell_dim == 0:
            return self.orientation * float(vals[0])
        return self.orientation * float(wts @ vals)

    def faces(self):
        """Cubical boundary faces with the standard alternating signs."""
        out = []
        coords = self.cell.coords
        for j in range(self.cell_dim):
            for side, value in ((0, ex.ZERO), (1, ex.ONE)):
                sub = {coords[j]: value}
                comps = [ex.subs(c, sub) for c in self.map.components]
                renamed = [ex.subs(c, {coords[i]: ex.var(coords[i - 1])
                                       for i in range(j + 1, self.cell_dim)})
                           for c in comps]
                sign = (-1) ** (j + 1) * (1 if side == 0 else -1)
                face = ParamPatch(self.target, self.cell_dim - 1, renamed,
                                  orientation=1, quad_order=self.quad_order,
                                  refine=self.refine)
                out.append((sign * self.orientation, face))
        return out


class Chain:
    """Formal integer combination of patches of one dimension."""

    def __init__(self, patches):
        entries = []
        dim = None
        for weight, patch in patches:
            if weight == 0:
                continue
            if dim is None:
                dim = patch.cell_dim
            elif patch.cell_dim != dim:
                raise ChainError("mixed-dimension chain")
            entries.append((int(weight), patch))
        self.entries = entries
        self.dim = dim if dim is not None else 0

    def __iter__(self):
        return iter(self.entries)

    def simplified(self):
        """Cancel structurally identical patches."""
        table = {}
        order = []
        for weight, patch in self.entries:
            k = patch.key()
            if k not in table:
                table[k] = [0, patch]
                order.append(k)
            table[k][0] += weight
        return Chain([(w, p) for w, p in (table[k] for k in order) if w != 0])

    def simplify_numeric(self, decimals=9):
        """Cancel patches whose maps agree numerically at probe nodes.

        Needed for trigonometric seams (e.g. a closure at angle 2*pi) where
        constant folding cannot identify the face maps structurally.
        """
        probes = np.linspace(0.17, 0.83, 4)
        table = {}
        order = []
        for weight, patch in self.entries:
            k = max(patch.cell_dim, 1)
            grid = np.stack(np.meshgrid(*([probes] * k), indexing="ij"),
                            axis=-1).reshape(-1, k)
            vals = patch.map_points(grid)
            key = (patch.cell_dim, patch.orientation,
                   tuple(np.round(vals, decimals).ravel()))
            if key not in table:
                table[key] = [0, patch]
                order.append(key)
            table[key][0] += weight
        return Chain([(w, p) for w, p in (table[k] for k in order) if w != 0])

    def boundary(self):
        faces = []
        for weight, patch in self.entries:
            for sign, face in patch.faces():
                faces.append((weight * sign, face))
        return Chain(faces).simplified()

    def is_cycle(self):
        """True when boundary faces cancel or are degenerate."""
        reduced = self.boundary().simplify_numeric()
        return all(p.is_degenerate() for _, p in reduced)

    def integrate(self, form, quad_order=None, refine=None):
        total = 0.0
        for weight, patch in sorted(self.entries, key=lambda wp: wp[1].key()):
            total += weight * patch.integrate(form, quad_order, refine)
        return total


def integrate_form(form, chain, quad_order=None, refine=None):
    """Integral with an error estimate from one refinement."""
    if form.degree != chain.dim:
        raise DegreeError(
            f"cannot integrate a degree-{form.degree} form over a {chain.dim}-chain")
    if refine is None:
        refine = max((p.refine for _, p in chain), default=1)
    coarse = chain.integrate(form, quad_order, refine)
    fine = chain.integrate(form, quad_order, 2 * refine)
    return fine, abs(fine - coarse)


@dataclass(frozen=True)
class StokesVerdict:
    passed: bool
    interior: float
    boundary: float
    residual: float
    tol: float


def check_stokes(form, chain, tol=1e-8, quad_order=None, refine=None):
    """| int_c d(form) - int_boundary(c) form | <= tol."""
    lhs = chain.integrate(exterior_derivative(form), quad_order, refine)
    rhs = chain.boundary().integrate(form, quad_order, refine)
    residual = abs(lhs - rhs)
    return StokesVerdict(residual <= tol, lhs, rhs, residual, tol)


@dataclass(frozen=True)
class LegendrianVerdict:
    passed: bool
    sup_pullback: float
    tol: float


def is_legendrian(chain, beta, tol=1e-9):
    """sup over nodes of the pulled-back contact form's coefficients."""
    sup = 0.0
    for _, patch in chain:
        pb = pullback(patch.map, beta)
        coeffs = [pb.coeffs.get((i,), ex.ZERO) for i in range(patch.cell_dim)]
        live = [c for c in coeffs if not c.is_zero]
        if not live:
            continue
        pts, _ = patch.nodes()
        vals = compile_tape(live, patch.cell.coords).evaluate(pts)
        sup = max(sup, float(np.max(np.abs(vals))))
    return LegendrianVerdict(sup <= tol, sup, tol)


@dataclass(frozen=True)
class BoundaryIdentityVerdict:
    passed: bool
    interior_integral: float
    boundary_integral: float
    residual: float
    preconditions: dict
    tol: float


def legendrian_boundary_identity(sigma, h_form, theta, ctx, k, tol=1e-7):
    """Check  int_Sigma h = - int_{boundary Sigma} theta.

    Preconditions: the boundary is Legendrian and h + d theta = (dbeta)^k
    pointwise at the quadrature nodes.
    """
    boundary = sigma.boundary().simplify_numeric()
    boundary = Chain([(w, p) for w, p in boundary if not p.is_degenerate()])
    legendrian = is_legendrian(boundary, ctx.beta, tol=max(tol, 1e-9))
    target = wedge_power(ctx.dbeta, k)
    mismatch = h_form + exterior_derivative(theta) - target
    sup_decomp = 0.0
    for _, patch in sigma:
        coeff = patch.pullback_coefficient(mismatch)
        if coeff.is_zero:
            continue
        pts, _ = patch.nodes()
        vals = compile_tape([coeff], patch.cell.coords).evaluate(pts)
        sup_decomp = max(sup_decomp, float(np.max(np.abs(vals))))
    pre = {"boundary_legendrian": legendrian.sup_pullback,
           "h_plus_dtheta_matches": sup_decomp}
    if not legendrian.passed or sup_decomp > max(tol, 1e-8):
        return BoundaryIdentityVerdict(False, np.nan, np.nan, np.inf, pre, tol)
    lhs = sigma.integrate(h_form)
    rhs = boundary.integrate(theta) if boundary.entries else 0.0
    residual = abs(lhs + rhs)
    return BoundaryIdentityVerdict(residual <= tol, lhs, rhs, residual, pre, tol)


def theta_functional(legendrian_chain, theta, beta, tol=1e-9):
    """int over a closed Legendrian chain of theta (gauge invariant)."""
    verdict = is_legendrian(legendrian_chain, beta, tol=tol)
    if not verdict.passed:
        raise ChainError(
            f"chain is not Legendrian (sup pullback {verdict.sup_pullback:.2e})")
    if not legendrian_chain.is_cycle():
        raise ChainError("theta functional needs a closed chain")
    return legendrian_chain.integrate(theta)


def asymptotic_cycle_pairing(ctx, alpha, volume_chain, samples=400,
                             tol=1e-9, seed=19):
    """Flow-average pairing: integral of alpha(v) beta ^ (dbeta)^n.

    Defined on closed fixtures for closed 1-forms; the raw (un-normalized)
    volume form is used and the signed value is reported together with the
    quadrature error estimate.
    """
    if getattr(ctx.manifold, "has_boundary", False):
        raise ChainError("asymptotic cycles need a closed fixture")
    if alpha.degree != 1:
        raise DegreeError("pairing needs a 1-form")
    points = ctx.manifold.sample_points(samples, seed=seed)
    closed_res = restricted_sup(exterior_derivative(alpha), points)
    if closed_res > tol:
        raise ChainError(f"alpha is not closed (sup d alpha = {closed_res:.2e})")
    density = interior_product(ctx.reeb, alpha)
    integrand = wedge(ctx.beta, wedge_power(ctx.dbeta, ctx.n)).scale(
        density.coeffs.get((), ex.ZERO))
    return integrate_form(integrand, volume_chain)
