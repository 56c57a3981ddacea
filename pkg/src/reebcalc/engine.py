"""Batched evaluation of expression tables ("tapes").

Canonical expressions are flattened once into a register program; the
program is then executed over whole batches of sample points.  Two
interchangeable executors are provided:

* a numba ``@njit`` kernel that walks the program point-by-point, and
* a pure-numpy executor that runs each instruction vectorized.

The active backend is chosen by the ``REEBCALC_BACKEND`` environment
variable (``numba``, ``numpy``, or ``auto``/unset for numba-if-available).
All call sites accept an explicit ``backend=`` override, which the
benchmark and the cross-backend tests use.
"""

from __future__ import annotations

import os

import numpy as np

from . import expr as ex

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_MUL = 3
OP_DIV = 4
OP_POW = 5
OP_SIN = 6
OP_COS = 7
OP_EXP = 8
OP_SQRT = 9
OP_NEG = 10

ENV_BACKEND = "REEBCALC_BACKEND"

_numba_kernel = None
_numba_failed = False


def numba_available():
    global _numba_failed
    if _numba_failed:
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        _numba_failed = True
        return False
    return True


def resolve_backend(backend=None):
    """Resolve ``backend`` (or the environment default) to numba/numpy."""
    choice = backend or os.environ.get(ENV_BACKEND, "").strip().lower() or "auto"
    if choice == "auto":
        return "numba" if numba_available() else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {choice!r} (use 'numba' or 'numpy')")
    if choice == "numba" and not numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    return choice


def _get_numba_kernel():
    global _numba_kernel
    if _numba_kernel is None:
        from numba import njit

        @njit(cache=True)
        def kernel(code, consts, X, n_regs, out_idx, out):
            n = X.shape[0]
            regs = np.empty(n_regs, dtype=np.float64)
            for i in range(n):
                for j in range(code.shape[0]):
                    op = code[j, 0]
                    a = code[j, 1]
                    b = code[j, 2]
                    d = code[j, 3]
                    if op == OP_CONST:
                        regs[d] = consts[a]
                    elif op == OP_VAR:
                        regs[d] = X[i, a]
                    elif op == OP_ADD:
                        regs[d] = regs[a] + regs[b]
                    elif op == OP_MUL:
                        regs[d] = regs[a] * regs[b]
                    elif op == OP_DIV:
                        regs[d] = regs[a] / regs[b]
                    elif op == OP_POW:
                        regs[d] = regs[a] ** b
                    elif op == OP_SIN:
                        regs[d] = np.sin(regs[a])
                    elif op == OP_COS:
                        regs[d] = np.cos(regs[a])
                    elif op == OP_EXP:
                        regs[d] = np.exp(regs[a])
                    elif op == OP_SQRT:
                        regs[d] = np.sqrt(regs[a])
                    else:
                        regs[d] = -regs[a]
                for t in range(out_idx.shape[0]):
                    out[i, t] = regs[out_idx[t]]

        _numba_kernel = kernel
    return _numba_kernel


class Tape:
    """A compiled batch-evaluation program for a list of expressions."""

    def __init__(self, code, consts, n_regs, out_idx, var_names):
        self.code = code
        self.consts = consts
        self.n_regs = n_regs
        self.out_idx = out_idx
        self.var_names = tuple(var_names)

    @property
    def n_outputs(self):
        return len(self.out_idx)

    def evaluate(self, points, backend=None):
        """Evaluate all outputs at ``points`` of shape (N, n_vars)."""
        X = np.ascontiguousarray(points, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.var_names):
            raise ValueError(
                f"expected {len(self.var_names)} coordinates, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.n_outputs), dtype=np.float64)
        if self.code.shape[0] == 0 or X.shape[0] == 0:
            out[:] = 0.0
            return out
        if resolve_backend(backend) == "numba":
            _get_numba_kernel()(self.code, self.consts, X,
                                self.n_regs, self.out_idx, out)
        else:
            self._run_numpy(X, out)
        return out

    def _run_numpy(self, X, out):
        regs = [None] * self.n_regs
        consts = self.consts
        for op, a, b, d in self.code:
            if op == OP_CONST:
                regs[d] = np.full(X.shape[0], consts[a])
            elif op == OP_VAR:
                regs[d] = X[:, a].copy()
            elif op == OP_ADD:
                regs[d] = regs[a] + regs[b]
            elif op == OP_MUL:
                regs[d] = regs[a] * regs[b]
            elif op == OP_DIV:
                regs[d] = regs[a] / regs[b]
            elif op == OP_POW:
                regs[d] = regs[a] ** int(b)
            elif op == OP_SIN:
                regs[d] = np.sin(regs[a])
            elif op == OP_COS:
                regs[d] = np.cos(regs[a])
            elif op == OP_EXP:
                regs[d] = np.exp(regs[a])
            elif op == OP_SQRT:
                regs[d] = np.sqrt(regs[a])
            else:
                regs[d] = -regs[a]
        for t, r in enumerate(self.out_idx):
            out[:, t] = regs[r]


class _Compiler:
    _FUNC_OPS = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "sqrt": OP_SQRT}

    def __init__(self, var_names):
        self.var_index = {name: i for i, name in enumerate(var_names)}
        self.code = []
        self.consts = []
        self.const_index = {}
        self.cache = {}
        self.n_regs = 0

    def _new_reg(self):
        r = self.n_regs
        self.n_regs += 1
        return r

    def _emit(self, op, a, b=0):
        d = self._new_reg()
        self.code.append((op, a, b, d))
        return d

    def emit_const(self, value):
        value = float(value)
        key = ("const", value)
        if key not in self.cache:
            if value not in self.const_index:
                self.const_index[value] = len(self.consts)
                self.consts.append(value)
            self.cache[key] = self._emit(OP_CONST, self.const_index[value])
        return self.cache[key]

    def emit_expr(self, e):
        key = ("expr", e.pkey)
        if key in self.cache:
            return self.cache[key]
        items = sorted(e.terms().items(), key=lambda it: ex._mono_pkey(it[0]))
        if not items:
            reg = self.emit_const(0.0)
        else:
            reg = None
            for mono, c in items:
                term = self.emit_term(mono, c)
                reg = term if reg is None else self._emit(OP_ADD, reg, term)
        self.cache[key] = reg
        return reg

    def emit_term(self, mono, coeff):
        key = ("term", ex._mono_pkey(mono), coeff)
        if key in self.cache:
            return self.cache[key]
        reg = None
        for atom, e in mono:
            p = self.emit_power(atom, e)
            reg = p if reg is None else self._emit(OP_MUL, reg, p)
        if reg is None:
            reg = self.emit_const(coeff)
        elif coeff == 1:
            pass
        elif coeff == -1:
            reg = self._emit(OP_NEG, reg)
        else:
            reg = self._emit(OP_MUL, reg, self.emit_const(coeff))
        self.cache[key] = reg
        return reg

    def emit_power(self, atom, e):
        key = ("pow", ex._atom_pkey(atom), e)
        if key in self.cache:
            return self.cache[key]
        base = self.emit_atom(atom)
        if e == 1:
            reg = base
        elif e == 2:
            reg = self._emit(OP_MUL, base, base)
        else:
            reg = self._emit(OP_POW, base, e)
        self.cache[key] = reg
        return reg

    def emit_atom(self, atom):
        key = ("atom", ex._atom_pkey(atom))
        if key in self.cache:
            return self.cache[key]
        kind = atom[0]
        if kind == "v":
            name = atom[1]
            if name not in self.var_index:
                raise ex.ExpressionError(f"unknown coordinate {name!r} in tape")
            reg = self._emit(OP_VAR, self.var_index[name])
        elif kind == "f":
            inner = self.emit_expr(atom[2])
            reg = self._emit(self._FUNC_OPS[atom[1]], inner)
        else:
            reg = self.emit_expr(atom[1])
        self.cache[key] = reg
        return reg


def compile_tape(exprs, var_names):
    """Compile expressions (sharing subterms) into a :class:`Tape`."""
    comp = _Compiler(var_names)
    out_idx = np.array([comp.emit_expr(e) for e in exprs], dtype=np.int64)
    code = np.array(comp.code, dtype=np.int64).reshape(-1, 4)
    consts = np.array(comp.consts, dtype=np.float64)
    return Tape(code, consts, comp.n_regs, out_idx, var_names)
