"""Linear algebra of the standard symplectic vector space R^{2n}.

In a frame (e_1, ..., e_2n) where the transversal symplectic form is
omega = e^1^e^2 + e^3^e^4 + ... and the compatible complex structure is
J e_{2i-1} = e_{2i}, every pointwise operator of the transversal Hodge
package becomes a fixed matrix depending only on (n, degree).  This module
builds those matrices:

* the duality pairing on p-covectors induced by inverting Lambda^p of the
  index-raising map of omega,
* the star operator solving  kappa ^ (star rho) = K(kappa, rho) omega^n/n!,
* the slot-wise action of J on p-forms,
* the Lefschetz wedge operator L, its dual Lambda, primitive subspaces and
  the constrained least-squares Lefschetz decomposition.

Basis convention: increasing index tuples over {0, ..., 2n-1}, ordered
lexicographically.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np


@lru_cache(maxsize=None)
def basis_indices(dim, p):
    """Increasing p-tuples over range(dim), lexicographic."""
    return tuple(combinations(range(dim), p))


def _merge_sign(left, right):
    """Sign sorting left+right (disjoint increasing tuples), or 0."""
    if set(left) & set(right):
        return 0, ()
    merged = list(left) + list(right)
    sign = 1
    for i in range(1, len(merged)):
        j = i
        while j > 0 and merged[j - 1] > merged[j]:
            merged[j - 1], merged[j] = merged[j], merged[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(merged)


@lru_cache(maxsize=None)
def wedge_matrix(dim, p, q):
    """W[(I,J) -> K] with e^I ^ e^J = sum_K W[K, (I,J)] e^K, as a 3-d array."""
    bi, bj, bk = basis_indices(dim, p), basis_indices(dim, q), basis_indices(dim, p + q)
    pos = {idx: c for c, idx in enumerate(bk)}
    out = np.zeros((len(bk), len(bi), len(bj)))
    for a, I in enumerate(bi):
        for b, J in enumerate(bj):
            sign, merged = _merge_sign(I, J)
            if sign:
                out[pos[merged], a, b] = sign
    return out


@lru_cache(maxsize=None)
def omega_components(n):
    """Components of omega in the Lambda^2 basis."""
    idx = basis_indices(2 * n, 2)
    w = np.zeros(len(idx))
    for c, I in enumerate(idx):
        if I[1] == I[0] + 1 and I[0] % 2 == 0:
            w[c] = 1.0
    return w


@lru_cache(maxsize=None)
def lefschetz_matrix(n, p):
    """L = omega ^ (.) : Lambda^p -> Lambda^{p+2} (zero map past top)."""
    dim = 2 * n
    if p + 2 > dim:
        return np.zeros((0, len(basis_indices(dim, p))))
    W = wedge_matrix(dim, 2, p)
    return np.einsum("kab,a->kb", W, omega_components(n))


@lru_cache(maxsize=None)
def q_matrix(n):
    """Index-raising map of omega: (Q u)_j = omega(u, e_j), as a matrix on components."""
    dim = 2 * n
    omega = np.zeros((dim, dim))
    for i in range(0, dim, 2):
        omega[i, i + 1] = 1.0
        omega[i + 1, i] = -1.0
    # column i = components of Q e_i
    return omega.T.copy()


@lru_cache(maxsize=None)
def k_pairing_matrix(n, p):
    """Matrix of the duality pairing on p-covectors: K(e^I, e^J)."""
    dim = 2 * n
    idx = basis_indices(dim, p)
    Q = q_matrix(n)
    lam_q = np.zeros((len(idx), len(idx)))
    for b, I in enumerate(idx):
        for a, J in enumerate(idx):
            lam_q[a, b] = np.linalg.det(Q[np.ix_(J, I)]) if p else 1.0
    # K(e^I, e^J) = <e^I, (Lambda^p Q)^{-1} e^J> = inv[I, J]
    return np.linalg.inv(lam_q)


@lru_cache(maxsize=None)
def top_complement_signs(n, p):
    """For each I, the complement Ic and sign with e^I ^ e^Ic = sign * top."""
    dim = 2 * n
    idx = basis_indices(dim, p)
    comp_pos = {c: i for i, c in enumerate(basis_indices(dim, dim - p))}
    rows = []
    for I in idx:
        Ic = tuple(sorted(set(range(dim)) - set(I)))
        sign, _ = _merge_sign(I, Ic)
        rows.append((comp_pos[Ic], sign))
    return tuple(rows)


@lru_cache(maxsize=None)
def star_b_matrix(n, p):
    """Star from the duality pairing, by solving its defining linear system.

    For each basis input rho the output s solves, over all basis kappa,
        kappa ^ s = K(kappa, rho) * omega^n / n!
    (omega^n/n! is the top covector with unit coefficient in this frame).
    """
    dim = 2 * n
    idx_p = basis_indices(dim, p)
    idx_out = basis_indices(dim, dim - p)
    K = k_pairing_matrix(n, p)
    W = wedge_matrix(dim, p, dim - p)  # (1, |p|, |out|)
    A = W[0]  # A[kappa, s-coefficient]
    out = np.empty((len(idx_out), len(idx_p)))
    for col in range(len(idx_p)):
        out[:, col] = np.linalg.solve(A, K[:, col])
    return out


@lru_cache(maxsize=None)
def j_matrix(n):
    dim = 2 * n
    J = np.zeros((dim, dim))
    for i in range(0, dim, 2):
        J[i + 1, i] = 1.0
        J[i, i + 1] = -1.0
    return J


@lru_cache(maxsize=None)
def j_action_matrix(n, p):
    """Slot-wise J on p-forms: (J.a)(u_1,...,u_p) = a(J u_1, ..., J u_p)."""
    dim = 2 * n
    idx = basis_indices(dim, p)
    J = j_matrix(n)
    out = np.zeros((len(idx), len(idx)))
    for b, I in enumerate(idx):  # input basis covector e^I
        for a, A in enumerate(idx):  # output coefficient on e^A
            out[a, b] = np.linalg.det(J[np.ix_(list(I), list(A))]) if p else 1.0
    return out


@lru_cache(maxsize=None)
def star_sympl_matrix(n, p):
    """Symplectic-compatible star: -J o star_b (slot-wise J convention)."""
    return -j_action_matrix(n, 2 * n - p) @ star_b_matrix(n, p)


@lru_cache(maxsize=None)
def lambda_matrix(n, p):
    """Dual Lefschetz operator: star_sympl o L o star_sympl (degree -2)."""
    if p < 2:
        return np.zeros((0, len(basis_indices(2 * n, p))))
    s_in = star_sympl_matrix(n, p)
    L_mid = lefschetz_matrix(n, 2 * n - p)
    s_out = star_sympl_matrix(n, 2 * n - p + 2)
    return s_out @ L_mid @ s_in


@lru_cache(maxsize=None)
def primitive_basis(n, p):
    """Orthonormal basis (columns) of the primitive subspace of Lambda^p."""
    if p > n:
        return np.zeros((len(basis_indices(2 * n, p)), 0))
    lam = lambda_matrix(n, p)
    if lam.shape[0] == 0:
        return np.eye(len(basis_indices(2 * n, p)))
    _, s, vt = np.linalg.svd(lam)
    rank = int(np.sum(s > 1e-10 * max(s[0], 1e-300)))
    return vt[rank:].T.copy()


@lru_cache(maxsize=None)
def star_b_involution_sign(n, p):
    """Global sign with star_b(star_b a) = sign * a on p-forms."""
    m = star_b_matrix(n, 2 * n - p) @ star_b_matrix(n, p)
    return _extract_sign(m)


@lru_cache(maxsize=None)
def star_sympl_square_sign(n, p):
    m = star_sympl_matrix(n, 2 * n - p) @ star_sympl_matrix(n, p)
    return _extract_sign(m)


def _extract_sign(m):
    d = m.shape[0]
    sign = round(m[0, 0]) if d else 1
    if not np.allclose(m, sign * np.eye(d), atol=1e-10):
        raise AssertionError("operator square is not a global sign")
    return int(sign)


@lru_cache(maxsize=None)
def _decomposition_system(n, k):
    """Least-squares system mapping primitive-coordinates to Lambda^k."""
    dim = 2 * n
    blocks = []
    meta = []
    for i in range(0, k // 2 + 1):
        deg = k - 2 * i
        P = primitive_basis(n, deg)
        if P.shape[1] == 0:
            meta.append((deg, 0))
            continue
        lift = P
        for step in range(i):
            lift = lefschetz_matrix(n, deg + 2 * step) @ lift
        blocks.append(lift)
        meta.append((deg, P.shape[1]))
    M = np.hstack(blocks) if blocks else np.zeros((len(basis_indices(dim, k)), 0))
    pinv = np.linalg.pinv(M, rcond=1e-12)
    return M, pinv, tuple(meta)


def lefschetz_decompose_components(n, k, values):
    """Decompose p-form component rows into primitive pieces.

    ``values`` has shape (N, dim Lambda^k).  Returns a dict keyed by the
    component degree k-2i with per-point component arrays in the Lambda
    basis, plus the per-point reconstruction residual.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    M, pinv, meta = _decomposition_system(n, k)
    coords = values @ pinv.T
    recon = coords @ M.T
    residual = np.linalg.norm(values - recon, axis=1)
    components = {}
    offset = 0
    for deg, width in meta:
        P = primitive_basis(n, deg)
        if width == 0:
            components[deg] = np.zeros((values.shape[0], len(basis_indices(2 * n, deg))))
            continue
        block = coords[:, offset:offset + width]
        components[deg] = block @ P.T
        offset += width
    return components, residual
