"""Transversal Hodge package: compatible (g, J), stars, Laplacians, Lefschetz.

The compatible pair is built from a seed metric by the polar trick: on the
contact distribution let A be the skew map with dbeta(u, w) = g0(A u, w);
then J = A (-A^2)^{-1/2} and g = dbeta(., J.).  For n = 1 the polar part
has the closed form J = -G0^{-1} Omega / sqrt(det Omega / det G0), which
keeps the whole construction inside the expression algebra, so stars and
co-derivatives stay exactly differentiable and compose with d symbolically.
General n is served pointwise (numeric frames) for synthetic symplectic
fibers.

All pointwise operator matrices come from the standard model in
:mod:`reebcalc.symplectic`, expressed in a frame that is simultaneously
g-orthonormal, J-standard and dbeta-standard.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from . import expr as ex
from . import symplectic as sp
from .contact import ContactError, is_basic
from .forms import (FormField, VectorField, exterior_derivative,
                    interior_product, restricted_sup, wedge, wedge_power)
from .manifold import LevelSet


class HodgeError(ValueError):
    pass


def _sym_det(mat):
    n = len(mat)
    if n == 1:
        return mat[0][0]
    total = ex.ZERO
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in mat[1:]]
        term = mat[0][j] * _sym_det(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


def _sym_inverse(mat):
    """(inverse, det) of a small expression matrix via the adjugate."""
    n = len(mat)
    det = _sym_det(mat)
    if det.is_zero:
        raise HodgeError("frame matrix is symbolically singular")
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[mat[r][c] for c in range(n) if c != i]
                     for r in range(n) if r != j]
            cof = _sym_det(minor) if n > 1 else ex.ONE
            if (i + j) % 2:
                cof = -cof
            inv[i][j] = cof / det
    return inv, det


def _scale_field(field, factor):
    return VectorField(field.manifold, [factor * c for c in field.components])


def _add_fields(a, b):
    return VectorField(a.manifold, [ca + cb for ca, cb in zip(a.components, b.components)])


def _contract_scalar(form2, u, w):
    """dbeta(u, w) as an expression, for 2-form and expression fields."""
    return interior_product(w, interior_product(u, form2)).coeffs.get((), ex.ZERO)


@dataclass
class CompatibilityReport:
    orthogonality: float           # sup |g(v, xi)|
    reeb_norm: float               # sup |g(v, v) - 1|
    sympl_metric: float            # sup |dbeta(a, b) - g(Ja, b)|
    j_invariance: float            # sup |dbeta(Ja, Jb) - dbeta(a, b)|
    j_square: float                # sup |J^2 + Id| on the frame


class TransversalHodge:
    """Compatible structure and pointwise operators over a contact fixture."""

    def __init__(self, ctx, seed_metric=None, samples=200, tol=1e-9, seed=3):
        self.ctx = ctx
        self.n = ctx.n
        self.manifold = ctx.manifold
        if not ctx.reeb.is_expression_backed:
            raise HodgeError("symbolic transversal structure needs an expression Reeb field")
        if ctx.xi_frame is None:
            raise HodgeError("fixture must provide a global expression frame of ker(beta)")
        if self.n != 1:
            raise HodgeError(
                "symbolic compatible structures are implemented for n = 1 fixtures; "
                "general n is available pointwise via reebcalc.symplectic")
        self.seed_metric = self._seed_matrix(seed_metric)
        self._build_symbolic()
        self._frame_cache = {}
        self.report = self.verify_compatibility(samples=samples, seed=seed)
        worst = max(self.report.orthogonality, self.report.reeb_norm,
                    self.report.sympl_metric, self.report.j_invariance,
                    self.report.j_square)
        if worst > tol:
            raise HodgeError(f"compatibility residual {worst:.3e} exceeds {tol:.1e}")

    def _seed_matrix(self, seed_metric):
        m = self.manifold.n_sym
        if seed_metric is None:
            return [[ex.ONE if i == j else ex.ZERO for j in range(m)] for i in range(m)]
        mat = [[c if isinstance(c, ex.Expr) else ex._coerce(c) for c in row]
               for row in seed_metric]
        if len(mat) != m or any(len(r) != m for r in mat):
            raise HodgeError(f"seed metric must be {m}x{m}")
        return mat

    def _g0(self, a, b):
        total = ex.ZERO
        for i, ca in enumerate(a.components):
            if ca.is_zero:
                continue
            for j, cb in enumerate(b.components):
                if cb.is_zero or self.seed_metric[i][j].is_zero:
                    continue
                total = total + ca * self.seed_metric[i][j] * cb
        return total

    def _build_symbolic(self):
        ctx = self.ctx
        u1, u2 = ctx.xi_frame
        omega12 = _contract_scalar(ctx.dbeta, u1, u2)
        if omega12.is_zero:
            raise ContactError("degenerate d(beta) on the provided frame")
        g11 = self._g0(u1, u1)
        g12 = self._g0(u1, u2)
        g22 = self._g0(u2, u2)
        det_g = g11 * g22 - g12 * g12
        sqrt_det = ex.sqrt(det_g)
        # n = 1 polar closed form: J = -G0^{-1} Omega / sqrt(det Omega / det G0)
        # on the (u1, u2) basis, assuming dbeta(u1, u2) > 0 on the domain.
        j11 = -g12 / sqrt_det
        j21 = g11 / sqrt_det
        j12 = -g22 / sqrt_det
        j22 = g12 / sqrt_det
        norm_sq = omega12 * g11 / sqrt_det       # g(u1, u1) = dbeta(u1, J u1)
        inv_norm = ex.ONE / ex.sqrt(norm_sq)
        e1 = _scale_field(u1, inv_norm)
        e2 = _add_fields(_scale_field(u1, j11 * inv_norm),
                         _scale_field(u2, j21 * inv_norm))
        self.frame_fields = (e1, e2)
        self.j_on_xi = ((j11, j12), (j21, j22))
        self._build_coframe()

    def _build_coframe(self):
        manifold = self.manifold
        columns = []
        if isinstance(manifold, LevelSet):
            normal = VectorField(manifold, [ex.diff(manifold.constraint, c)
                                            for c in manifold.coords])
            columns.append(normal)
        columns.append(self.ctx.reeb)
        columns.extend(self.frame_fields)
        mat = [[f.components[i] for f in columns] for i in range(manifold.n_sym)]
        inv, det = _sym_inverse(mat)
        self.frame_det = det
        offset = len(columns) - 2
        rows = []
        for r in range(offset, offset + 2):
            rows.append(FormField.one_form(manifold, [inv[r][j] for j in range(manifold.n_sym)]))
        self.coframe = tuple(rows)

    # frame transport of components ------------------------------------------
    def frame_at(self, point):
        key = tuple(np.asarray(point, dtype=np.float64).ravel())
        cached = self._frame_cache.get(key)
        if cached is None:
            p = np.array(key, dtype=np.float64)[None, :]
            cached = np.vstack([f.eval_at(p)[0] for f in self.frame_fields])
            self._frame_cache.setdefault(key, cached)
        return cached

    def frames_at(self, points):
        """Batched unitary frames, shape (N, 2n, n_sym)."""
        points = np.atleast_2d(points)
        vals = [f.eval_at(points) for f in self.frame_fields]
        return np.stack(vals, axis=1)

    def to_frame(self, alpha):
        """Symbolic components of a basic form in the unitary frame."""
        comps = []
        for index in sp.basis_indices(2 * self.n, alpha.degree):
            c = alpha
            for i in index:
                c = interior_product(self.frame_fields[i], c)
            comps.append(c.coeffs.get((), ex.ZERO))
        return comps

    def from_frame(self, degree, comps):
        out = FormField.zero(self.manifold, degree)
        for c, index in zip(comps, sp.basis_indices(2 * self.n, degree)):
            if c.is_zero:
                continue
            piece = FormField.function(self.manifold, c)
            for i in index:
                piece = wedge(piece, self.coframe[i])
            out = out + piece
        return out

    def components_at(self, alpha, points):
        """Numeric frame components at sample points, shape (N, dim)."""
        points = np.atleast_2d(points)
        frames = self.frames_at(points)
        indices = sp.basis_indices(2 * self.n, alpha.degree)
        out = np.empty((points.shape[0], len(indices)))
        for col, index in enumerate(indices):
            out[:, col] = alpha.evaluate_on_frames(points, frames[:, index, :])
        return out

    def _apply_matrix(self, alpha, matrix, out_degree):
        comps = self.to_frame(alpha)
        out_comps = []
        for row in matrix:
            total = ex.ZERO
            for entry, c in zip(row, comps):
                f = Fraction(float(entry))
                if f and not c.is_zero:
                    total = total + ex.const(f) * c
            out_comps.append(total)
        return self.from_frame(out_degree, out_comps)

    # operators ----------------------------------------------------------------
    def star_b(self, alpha):
        """Hodge star from the transversal duality pairing."""
        p = alpha.degree
        if p > 2 * self.n:
            raise HodgeError(f"degree {p} exceeds the transversal dimension")
        return self._apply_matrix(alpha, sp.star_b_matrix(self.n, p), 2 * self.n - p)

    def star_sympl(self, alpha):
        p = alpha.degree
        return self._apply_matrix(alpha, sp.star_sympl_matrix(self.n, p), 2 * self.n - p)

    def codiff_b(self, alpha):
        p = alpha.degree
        if p == 0:
            return FormField.zero(self.manifold, 0)
        inner = exterior_derivative(self.star_b(alpha))
        out = self.star_b(inner)
        return out if (p + 1) % 2 == 0 else -out

    def codiff_sympl(self, alpha):
        p = alpha.degree
        if p == 0:
            return FormField.zero(self.manifold, 0)
        inner = exterior_derivative(self.star_sympl(alpha))
        out = self.star_sympl(inner)
        return out if (p + 1) % 2 == 0 else -out

    def laplace_b(self, alpha):
        p = alpha.degree
        terms = []
        if p > 0:
            terms.append(exterior_derivative(self.codiff_b(alpha)))
        if p < 2 * self.n:
            terms.append(self.codiff_b(exterior_derivative(alpha)))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    def laplace_sympl(self, alpha):
        p = alpha.degree
        terms = []
        if p > 0:
            terms.append(exterior_derivative(self.codiff_sympl(alpha)))
        if p < 2 * self.n:
            terms.append(self.codiff_sympl(exterior_derivative(alpha)))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    def lefschetz_L(self, alpha):
        """Wedge with d(beta); degree overflow gives the zero form."""
        if alpha.degree + 2 > 2 * self.n:
            return FormField.zero(self.manifold,
                                  min(alpha.degree + 2, self.manifold.n_sym))
        return wedge(self.ctx.dbeta, alpha)

    def lefschetz_Lambda(self, alpha):
        p = alpha.degree
        if p < 2:
            return FormField.zero(self.manifold, 0)
        return self._apply_matrix(alpha, sp.lambda_matrix(self.n, p), p - 2)

    def is_symplectically_harmonic(self, alpha, samples=400, tol=1e-8, seed=5):
        points = self.manifold.sample_points(samples, seed=seed)
        closed = restricted_sup(exterior_derivative(alpha), points)
        cocl = restricted_sup(self.codiff_sympl(alpha), points)
        return closed <= tol and cocl <= tol, closed, cocl

    def pairing_K(self, kappa, rho, point, tol=1e-9):
        """Duality pairing of two basic p-forms at a point."""
        if kappa.degree != rho.degree:
            raise HodgeError("pairing needs equal degrees")
        p = np.asarray(point, dtype=np.float64)
        for form in (kappa, rho):
            if form.degree >= 1:
                res = self._horizontality_at(form, p)
                if res > tol:
                    raise HodgeError(
                        f"pairing input is not horizontal at the point (sup {res:.2e})")
        ck = self.components_at(kappa, p[None, :])[0]
        cr = self.components_at(rho, p[None, :])[0]
        K = sp.k_pairing_matrix(self.n, kappa.degree)
        return float(ck @ K @ cr)

    def _horizontality_at(self, form, point):
        v = self.ctx.reeb.eval_at(point[None, :])
        frame = self.frame_at(point)
        sup = 0.0
        for combo in combinations(range(2 * self.n), form.degree - 1):
            stacked = np.concatenate([v[:, None, :], frame[None, combo, :]], axis=1)
            vals = form.evaluate_on_frames(point[None, :], stacked)
            sup = max(sup, float(np.max(np.abs(vals))))
        return sup

    def is_primitive(self, alpha, samples=300, tol=1e-9, seed=7):
        """Both primitivity tests plus their agreement flag."""
        k = self.n - alpha.degree
        if k < 0:
            raise HodgeError(f"degree {alpha.degree} exceeds n = {self.n}")
        points = self.manifold.sample_points(samples, seed=seed)
        powered = alpha
        for _ in range(k + 1):
            powered = self.lefschetz_L(powered)
        sup_l = restricted_sup(powered, points)
        sup_lambda = restricted_sup(self.lefschetz_Lambda(alpha), points) \
            if alpha.degree >= 2 else 0.0
        verdict_l = sup_l <= tol
        verdict_lambda = sup_lambda <= tol
        return PrimitivityVerdict(verdict_l and verdict_lambda, sup_l, sup_lambda,
                                  verdict_l == verdict_lambda, tol)

    def lefschetz_decompose(self, alpha, points, tol=1e-9):
        """Pointwise unique decomposition into primitive pieces."""
        if alpha.degree > 2 * self.n:
            raise HodgeError("degree exceeds the transversal dimension")
        points = np.atleast_2d(points)
        values = self.components_at(alpha, points)
        comps, residual = sp.lefschetz_decompose_components(self.n, alpha.degree, values)
        prim_residual = 0.0
        for deg, arr in comps.items():
            lam = sp.lambda_matrix(self.n, deg)
            if lam.shape[0]:
                prim_residual = max(prim_residual, float(np.max(np.abs(arr @ lam.T))))
        return PrimitiveDecomposition(alpha.degree, self.n, points, comps,
                                      float(np.max(residual)), prim_residual, tol)

    # verification ---------------------------------------------------------------
    def verify_compatibility(self, samples=200, seed=3):
        """Sampled residuals of the three compatibility relations.

        The constructed metric is the one making (v, e_1, e_2) orthonormal,
        so Reeb orthogonality and unit norm reduce to beta(e_i) = 0 and
        beta(v) = 1; the metric relation reduces to dbeta being the
        standard block on the frame.
        """
        manifold = self.manifold
        points = manifold.sample_points(samples, seed=seed)
        n_pts = points.shape[0]
        v = self.ctx.reeb.eval_at(points)
        frames = self.frames_at(points)
        db = self.ctx.dbeta
        omega_frame = np.empty((n_pts, 2, 2))
        for a in range(2):
            for b in range(2):
                pairs = np.stack([frames[:, a, :], frames[:, b, :]], axis=1)
                omega_frame[:, a, b] = db.evaluate_on_frames(points, pairs)
        target = np.array([[0.0, 1.0], [-1.0, 0.0]])
        sympl_metric = float(np.max(np.abs(omega_frame - target)))
        # J standard in the frame: dbeta(J a, J b) = dbeta(a, b) becomes the
        # same Gram identity rotated by the standard block.
        Jstd = np.array([[0.0, -1.0], [1.0, 0.0]])
        rotated = np.einsum("ac,ncd,db->nab", Jstd.T, omega_frame, Jstd)
        j_invariance = float(np.max(np.abs(rotated - omega_frame)))
        # J^2 = -Id pointwise on the expression matrix
        jmat = self.j_on_xi
        from .engine import compile_tape
        entries = [jmat[0][0] * jmat[0][0] + jmat[0][1] * jmat[1][0] + ex.ONE,
                   jmat[0][0] * jmat[0][1] + jmat[0][1] * jmat[1][1],
                   jmat[1][0] * jmat[0][0] + jmat[1][1] * jmat[1][0],
                   jmat[1][0] * jmat[0][1] + jmat[1][1] * jmat[1][1] + ex.ONE]
        vals = compile_tape(entries, manifold.coords).evaluate(points)
        j_sq = float(np.max(np.abs(vals)))
        beta = self.ctx.beta
        ortho = 0.0
        for a in range(2):
            vals = beta.evaluate_on_frames(points, frames[:, [a], :])
            ortho = max(ortho, float(np.max(np.abs(vals))))
        vvals = beta.evaluate_on_frames(points, v[:, None, :])
        reeb_norm = float(np.max(np.abs(vvals - 1.0)))
        return CompatibilityReport(ortho, reeb_norm, sympl_metric, j_invariance, j_sq)


@dataclass(frozen=True)
class PrimitivityVerdict:
    is_primitive: bool
    sup_lefschetz_power: float
    sup_lambda: float
    tests_agree: bool
    tol: float


class PrimitiveDecomposition:
    """Pointwise primitive components of a basic form."""

    def __init__(self, degree, n, points, components, residual, primitivity_residual, tol):
        self.degree = degree
        self.n = n
        self.points = points
        self.components = components      # {component degree: (N, dim) arrays}
        self.residual = residual
        self.primitivity_residual = primitivity_residual
        self.tol = tol

    @property
    def ok(self):
        return self.residual <= self.tol and self.primitivity_residual <= self.tol

    def reconstruction(self):
        """Frame components of sum_i L^i rho_{k-2i} at the stored points."""
        n, k = self.n, self.degree
        total = np.zeros((self.points.shape[0], len(sp.basis_indices(2 * n, k))))
        for deg, arr in self.components.items():
            lift = arr
            step = deg
            while step < k:
                lift = lift @ sp.lefschetz_matrix(n, step).T
                step += 2
            total += lift
        return total
