"""Contact structure verification and Reeb field extraction.

A contact form beta on a (2n+1)-manifold is checked by sampling the top
density |beta ^ (dbeta)^n| on oriented frames.  The Reeb field solves the
stacked pointwise linear system { u . dbeta = 0 on tangent vectors,
beta(u) = 1 } and, when the coefficients are simple enough, is fitted to
an expression vector and re-verified; otherwise a pointwise numeric field
is returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import expr as ex
from .forms import (FormField, PointwiseVectorField, VectorField,
                    exterior_derivative, interior_product, pullback,
                    restricted_sup, wedge, wedge_power)
from .manifold import LevelSet


class ContactError(ValueError):
    pass


@dataclass(frozen=True)
class ContactVerdict:
    passed: bool
    min_density: float
    samples: int
    tol: float


@dataclass(frozen=True)
class BasicVerdict:
    """Sampled sup-norm verdict for the two horizontality constraints."""

    is_basic: bool
    sup_contraction: float
    sup_d_contraction: float
    samples: int
    tol: float
    symbolic_zero: bool = False


@dataclass(frozen=True)
class NaturalityVerdict:
    passed: bool
    pullback_deviation: float
    power_deviations: tuple
    basic_pullback_ok: bool
    tol: float


def contact_density(beta, dbeta, points):
    """|beta ^ (dbeta)^n| on the declared orientation frame at each point."""
    manifold = beta.manifold
    n = (manifold.dim - 1) // 2
    top = wedge(beta, wedge_power(dbeta, n))
    frames = manifold.oriented_frames(points)
    return top.evaluate_on_frames(points, frames)


def check_contact(beta, samples=1000, tol=1e-9, seed=0):
    """Contact condition: min over samples of the top density magnitude."""
    manifold = beta.manifold
    if manifold.dim % 2 == 0:
        raise ContactError(f"contact forms need odd dimension, got {manifold.dim}")
    if beta.degree != 1:
        raise ContactError("beta must be a 1-form")
    points = manifold.sample_points(samples, seed=seed)
    density = np.abs(contact_density(beta, exterior_derivative(beta), points))
    min_density = float(np.min(density))
    return ContactVerdict(min_density > tol, min_density, samples, tol)


def _reeb_solve_points(beta, dbeta, points):
    """Pointwise least-squares solve of the stacked Reeb system."""
    manifold = beta.manifold
    m = manifold.n_sym
    points = np.atleast_2d(points)
    n_pts = points.shape[0]
    _, beta_vals = beta.coefficient_values(points)
    b_vec = np.zeros((n_pts, m))
    for col, idx in enumerate(beta.indices()):
        b_vec[:, idx[0]] = beta_vals[:, col]
    omega = np.zeros((n_pts, m, m))
    _, db_vals = dbeta.coefficient_values(points)
    for col, (i, j) in enumerate(dbeta.indices()):
        omega[:, i, j] = db_vals[:, col]
        omega[:, j, i] = -db_vals[:, col]
    out = np.empty((n_pts, m))
    if isinstance(manifold, LevelSet):
        grads = manifold.gradients(points)
        tangents = manifold.tangent_basis(points)
    for k in range(n_pts):
        if isinstance(manifold, LevelSet):
            # rows: dbeta(u, w) = 0 for tangent w, beta(u) = 1, grad F . u = 0
            rows = [tangents[k] @ omega[k].T, b_vec[k][None, :], grads[k][None, :]]
            rhs = np.concatenate([np.zeros(tangents.shape[1]), [1.0], [0.0]])
        else:
            rows = [omega[k].T, b_vec[k][None, :]]
            rhs = np.concatenate([np.zeros(m), [1.0]])
        A = np.vstack(rows)
        sol, _, _, sv = np.linalg.lstsq(A, rhs, rcond=None)
        if sv[-1] < 1e-10 * max(sv[0], 1.0):
            raise ContactError("singular Reeb system: contact condition violated")
        out[k] = sol
    return out


def _fit_dictionary(manifold):
    """Low-complexity scalar dictionary used to fit Reeb components."""
    names = manifold.coords
    dictionary = [ex.ONE]
    variables = [ex.var(n) for n in names]
    dictionary.extend(variables)
    for i in range(len(names)):
        for j in range(i, len(names)):
            dictionary.append(variables[i] * variables[j])
    for v in names:
        dictionary.append(ex.sin(ex.var(v)))
        dictionary.append(ex.cos(ex.var(v)))
    return dictionary


def _snap(value, tol=1e-9, max_den=24):
    frac = Fraction(value).limit_denominator(max_den)
    if abs(float(frac) - value) <= tol:
        return frac
    return None


def fit_expression_field(manifold, values, points, residual_tol=1e-9):
    """Fit sampled vector values by a small expression dictionary.

    Returns a :class:`VectorField` or None if the fit is not exact enough
    or the coefficients do not snap to simple rationals.
    """
    from .engine import compile_tape
    dictionary = _fit_dictionary(manifold)
    design = compile_tape(dictionary, manifold.coords).evaluate(points)
    components = []
    for comp in range(values.shape[1]):
        coeffs, _, _, _ = np.linalg.lstsq(design, values[:, comp], rcond=None)
        coeffs[np.abs(coeffs) < 1e-10] = 0.0
        residual = np.max(np.abs(design @ coeffs - values[:, comp]))
        if residual > residual_tol:
            return None
        expr_comp = ex.ZERO
        for c, term in zip(coeffs, dictionary):
            if c == 0.0:
                continue
            snapped = _snap(float(c))
            if snapped is None:
                return None
            expr_comp = expr_comp + ex.const(snapped) * term
        components.append(expr_comp)
    return VectorField(manifold, components)


def horizontal_sup(form, points):
    """sup over samples of the restriction of a form to the manifold."""
    return restricted_sup(form, points)


def reeb_field(beta, samples=400, tol=1e-9, seed=0, hint=None):
    """Extract the Reeb field of ``beta``.

    ``hint`` may carry candidate component expressions; they are verified
    and used when exact.  Without a hint the pointwise solution is fitted
    to the expression dictionary; if the fit fails the field stays a
    pointwise numeric solver.
    """
    manifold = beta.manifold
    dbeta = exterior_derivative(beta)
    points = manifold.sample_points(samples, seed=seed)

    def verify(candidate):
        pairing = interior_product(candidate, beta)
        res_pair = restricted_sup(pairing - FormField.function(manifold, 1), points)
        res_horiz = restricted_sup(interior_product(candidate, dbeta), points)
        return max(res_pair, res_horiz)

    if hint is not None:
        candidate = hint if isinstance(hint, VectorField) else VectorField(
            manifold, [manifold.parse(c) if isinstance(c, str) else c for c in hint])
        residual = verify(candidate)
        if residual > tol:
            raise ContactError(f"Reeb hint fails its defining relations (sup {residual:.2e})")
        return candidate

    values = _reeb_solve_points(beta, dbeta, points)
    candidate = fit_expression_field(manifold, values, points)
    if candidate is not None and verify(candidate) <= tol:
        return candidate

    def solve_one(p):
        return _reeb_solve_points(beta, dbeta, p[None, :])[0]

    return PointwiseVectorField(manifold, solve_one)


def reeb_residuals(ctx, points):
    """(sup |beta(v)-1|, sup |tangential(v . dbeta)|) at sample points."""
    v_vals = ctx.reeb.eval_at(points)
    _, beta_vals = ctx.beta.coefficient_values(points)
    b_vec = np.zeros((points.shape[0], ctx.manifold.n_sym))
    for col, idx in enumerate(ctx.beta.indices()):
        b_vec[:, idx[0]] = beta_vals[:, col]
    if isinstance(ctx.manifold, LevelSet):
        v_vals = ctx.manifold.project_vectors(points, v_vals)
    pairing = np.einsum("ni,ni->n", b_vec, v_vals)
    res1 = float(np.max(np.abs(pairing - 1.0)))
    _, db_vals = ctx.dbeta.coefficient_values(points)
    omega = np.zeros((points.shape[0], ctx.manifold.n_sym, ctx.manifold.n_sym))
    for col, (i, j) in enumerate(ctx.dbeta.indices()):
        omega[:, i, j] = db_vals[:, col]
        omega[:, j, i] = -db_vals[:, col]
    contraction = np.einsum("ni,nij->nj", v_vals, omega)
    frames = ctx.manifold.tangent_basis(points)
    tangential = np.einsum("nj,nkj->nk", contraction, frames)
    res2 = float(np.max(np.abs(tangential)))
    return res1, res2


class ContactData:
    """A contact form with its cached differential and Reeb field."""

    def __init__(self, beta, samples=1000, tol=1e-9, seed=0, reeb_hint=None,
                 xi_frame=None, check=True):
        manifold = beta.manifold
        if manifold.dim % 2 == 0:
            raise ContactError("contact manifolds are odd-dimensional")
        self.manifold = manifold
        self.beta = beta
        self.dbeta = exterior_derivative(beta)
        self.n = (manifold.dim - 1) // 2
        self.tol = tol
        if check:
            verdict = check_contact(beta, samples=samples, tol=tol, seed=seed)
            if not verdict.passed:
                raise ContactError(
                    f"contact condition fails (min density {verdict.min_density:.3e})")
            self.contact_verdict = verdict
        else:
            self.contact_verdict = None
        self.reeb = reeb_field(beta, samples=min(samples, 400), tol=max(tol, 1e-9),
                               seed=seed, hint=reeb_hint)
        self.xi_frame = tuple(xi_frame) if xi_frame else None

    def __repr__(self):
        return f"ContactData(n={self.n}, beta={self.beta!r})"


def is_basic(alpha, v, samples=1000, tol=1e-9, seed=0):
    """Sampled verdict for v . alpha = 0 and v . d alpha = 0.

    Symbolic zero contractions are detected opportunistically and reported
    exactly.
    """
    manifold = alpha.manifold
    points = manifold.sample_points(samples, seed=seed)

    def sup_of(form):
        if form.is_zero:
            return 0.0, True
        return restricted_sup(form, points), False

    if alpha.degree == 0:
        sup_h, sym_h = 0.0, True
    elif v.components is not None:
        sup_h, sym_h = sup_of(interior_product(v, alpha))
    else:
        sup_h, sym_h = _numeric_contraction_sup(alpha, v, points), False

    dalpha = exterior_derivative(alpha)
    if v.components is not None:
        sup_dh, sym_dh = sup_of(interior_product(v, dalpha))
    else:
        sup_dh, sym_dh = _numeric_contraction_sup(dalpha, v, points), False
    return BasicVerdict(sup_h <= tol and sup_dh <= tol, sup_h, sup_dh,
                        samples, tol, symbolic_zero=sym_h and sym_dh)


def _numeric_contraction_sup(form, v, points):
    if form.is_zero or form.degree == 0:
        return 0.0
    manifold = form.manifold
    v_vals = v.eval_at(points)
    frames = manifold.tangent_basis(points)
    sup = 0.0
    from itertools import combinations
    for combo in combinations(range(frames.shape[1]), form.degree - 1):
        stacked = np.concatenate([v_vals[:, None, :], frames[:, combo, :]], axis=1)
        vals = form.evaluate_on_frames(points, stacked)
        sup = max(sup, float(np.max(np.abs(vals))))
    return sup


def symplectic_frame(ctx, point, tol=1e-12):
    """Symplectic Gram-Schmidt frame (e_1, ..., e_2n) of ker(beta) at a point.

    Pivot order is the coordinate order sorted by |beta(d_i)| ascending
    (largest last), so repeated runs are bit-identical.
    """
    manifold = ctx.manifold
    p = np.asarray(point, dtype=np.float64)
    m = manifold.n_sym
    _, beta_vals = ctx.beta.coefficient_values(p[None, :])
    b = np.zeros(m)
    for col, idx in enumerate(ctx.beta.indices()):
        b[idx[0]] = beta_vals[0, col]
    v = ctx.reeb.eval_at(p[None, :])[0]
    _, db_vals = ctx.dbeta.coefficient_values(p[None, :])
    omega = np.zeros((m, m))
    for col, (i, j) in enumerate(ctx.dbeta.indices()):
        omega[i, j] = db_vals[0, col]
        omega[j, i] = -db_vals[0, col]

    candidates = []
    axes = sorted(range(m), key=lambda i: (abs(b[i]), i))
    for i in axes:
        u = np.zeros(m)
        u[i] = 1.0
        if isinstance(manifold, LevelSet):
            u = manifold.project_vectors(p[None, :], u[None, :])[0]
        u = u - (b @ u) * v
        if np.linalg.norm(u) > tol:
            candidates.append(u)

    def omega_pair(x, y):
        return float(x @ omega @ y)

    pairs = []
    pending = None
    for u in candidates:
        w = u.copy()
        for a_vec, b_vec2 in pairs:
            w = w - omega_pair(w, b_vec2) * a_vec + omega_pair(w, a_vec) * b_vec2
        if np.linalg.norm(w) <= 1e-9:
            continue
        if pending is None:
            pending = w
            continue
        pairing = omega_pair(pending, w)
        if abs(pairing) <= 1e-9:
            continue
        pairs.append((pending, w / pairing))
        pending = None
        if len(pairs) == ctx.n:
            break
    if len(pairs) < ctx.n:
        raise ContactError("degenerate d(beta) on the contact distribution")
    frame = []
    for a_vec, b_vec2 in pairs:
        frame.append(a_vec)
        frame.append(b_vec2)
    return np.array(frame)


def immersion_naturality(psi, ctx_x, ctx_y, ell, test_forms=None,
                         samples=400, tol=1e-9, seed=0):
    """Check pullback naturality of an immersion with psi* beta_Y = beta_X.

    Verifies the pullback of the ell-th power of d(beta_Y) and that
    pullbacks of basic test forms stay basic.  A violated precondition
    returns a failed verdict carrying the sup deviation.
    """
    if ell > ctx_y.n:
        raise ContactError(f"power {ell} exceeds n = {ctx_y.n}")
    manifold = ctx_x.manifold
    points = manifold.sample_points(samples, seed=seed)
    deviation = restricted_sup(pullback(psi, ctx_y.beta) - ctx_x.beta, points)
    if deviation > tol:
        return NaturalityVerdict(False, deviation, (), False, tol)
    power_devs = []
    for k in range(1, ell + 1):
        diff = pullback(psi, wedge_power(ctx_y.dbeta, k)) - wedge_power(ctx_x.dbeta, k)
        power_devs.append(restricted_sup(diff, points))
    if test_forms is None:
        test_forms = [ctx_y.dbeta, wedge_power(ctx_y.dbeta, ell)]
    basics_ok = True
    for form in test_forms:
        verdict_y = is_basic(form, ctx_y.reeb, samples=samples, tol=tol, seed=seed)
        if not verdict_y.is_basic:
            continue
        verdict_x = is_basic(pullback(psi, form), ctx_x.reeb,
                             samples=samples, tol=tol, seed=seed)
        basics_ok = basics_ok and verdict_x.is_basic
    passed = all(d <= max(tol, 1e-9) for d in power_devs) and basics_ok
    return NaturalityVerdict(passed, deviation, tuple(power_devs), basics_ok, tol)
