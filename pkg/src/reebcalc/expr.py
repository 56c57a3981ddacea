"""Exact symbolic scalar expressions with total partial differentiation.

Expressions are kept in a canonical form: a finite sum of monomials with
rational coefficients, where a monomial is a product of integer powers of
*atoms*.  Atoms are coordinate symbols, applications of ``sin``, ``cos``,
``exp``, ``sqrt`` to a canonical expression, or a whole (primitive) sum
raised to a negative power.  Positive integer powers of sums are always
expanded, so structurally equal values collapse to identical term tables.
In particular mixed partial derivatives agree term-for-term, which makes
``d(d(form))`` vanish exactly rather than up to roundoff.
"""

from __future__ import annotations

import math
from fractions import Fraction

FUNCTIONS = ("sin", "cos", "exp", "sqrt")

_ZERO = Fraction(0)
_ONE = Fraction(1)


class ExpressionError(ValueError):
    """Raised for malformed expression input (parsing or domain errors)."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


def _atom_pkey(atom):
    kind = atom[0]
    if kind == "v":
        return (0, atom[1])
    if kind == "f":
        return (1, atom[1], atom[2].pkey)
    return (2, atom[1].pkey)


def _mono_pkey(mono):
    return tuple((_atom_pkey(a), e) for a, e in mono)


class Expr:
    """Immutable canonical expression; build through the module helpers."""

    __slots__ = ("_terms", "_pkey", "_hash")

    def __init__(self, terms):
        self._terms = terms
        self._pkey = None
        self._hash = None

    @property
    def pkey(self):
        if self._pkey is None:
            items = [(_mono_pkey(m), c) for m, c in self._terms.items()]
            items.sort(key=lambda it: it[0])
            self._pkey = tuple(items)
        return self._pkey

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.pkey)
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return self.pkey == other.pkey

    def __lt__(self, other):
        return self.pkey < other.pkey

    @property
    def is_zero(self):
        return not self._terms

    @property
    def is_constant(self):
        return all(m == () for m in self._terms)

    def constant_value(self):
        if not self.is_constant:
            raise ExpressionError("expression is not constant")
        return self._terms.get((), _ZERO)

    def free_symbols(self):
        out = set()
        for mono in self._terms:
            for atom, _ in mono:
                _collect_symbols(atom, out)
        return out

    def terms(self):
        return self._terms

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Expr(_add_tables(self._terms, other._terms))

    __radd__ = __add__

    def __neg__(self):
        return Expr({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other + (-self)

    def __mul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _div(self, other)

    def __rtruediv__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _div(other, self)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise ExpressionError("only integer powers are supported")
        return _pow(self, n)

    def diff(self, name):
        return diff(self, name)

    def subs(self, mapping):
        return subs(self, mapping)

    def __repr__(self):
        return f"Expr({to_text(self)})"

    def __str__(self):
        return to_text(self)


def _collect_symbols(atom, out):
    if atom[0] == "v":
        out.add(atom[1])
    elif atom[0] == "f":
        out |= atom[2].free_symbols()
    else:
        out |= atom[1].free_symbols()


def _coerce(value):
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return const(value)
    if isinstance(value, float):
        return const(Fraction(value))
    return NotImplemented


ZERO = Expr({})
ONE = Expr({(): _ONE})


def const(value):
    c = Fraction(value)
    return Expr({(): c}) if c else ZERO


def var(name):
    return Expr({((("v", name), 1),): _ONE})


def _add_tables(a, b):
    out = dict(a)
    for m, c in b.items():
        nc = out.get(m, _ZERO) + c
        if nc:
            out[m] = nc
        else:
            out.pop(m, None)
    return out


def _reduce_factor(atom, e):
    """Canonical reduction of one atom power.

    Returns (kept-factor-or-None, deferred (expr, exponent) list).
    Positive powers of sum atoms are expanded and ``sqrt(u)^(2q+r)``
    reduces to ``u^q * sqrt(u)^r``.
    """
    if atom[0] == "s" and e > 0:
        return None, [(atom[1], e)]
    if atom[0] == "f" and atom[1] == "sqrt" and abs(e) >= 2:
        q, r = divmod(e, 2)
        kept = (atom, r) if r else None
        return kept, [(atom[2], q)]
    return (atom, e), []


def _merge_monos(m1, m2):
    """Merge two sorted monomials; returns (mono, deferred factors)."""
    out = []
    deferred = []
    i = j = 0
    k1, k2 = [_atom_pkey(a) for a, _ in m1], [_atom_pkey(a) for a, _ in m2]
    while i < len(m1) and j < len(m2):
        if k1[i] == k2[j]:
            atom, e = m1[i][0], m1[i][1] + m2[j][1]
            if e:
                kept, extra = _reduce_factor(atom, e)
                if kept is not None:
                    out.append(kept)
                deferred.extend(extra)
            i += 1
            j += 1
        elif k1[i] < k2[j]:
            out.append(m1[i])
            i += 1
        else:
            out.append(m2[j])
            j += 1
    out.extend(m1[i:])
    out.extend(m2[j:])
    return tuple(out), deferred


def _mul(a, b):
    ta, tb = a.terms(), b.terms()
    if not ta or not tb:
        return ZERO
    if len(ta) > len(tb):
        ta, tb = tb, ta
    out = {}
    pending = []
    for m1, c1 in ta.items():
        for m2, c2 in tb.items():
            mono, deferred = _merge_monos(m1, m2)
            c = c1 * c2
            if deferred:
                pending.append((mono, c, deferred))
            else:
                nc = out.get(mono, _ZERO) + c
                if nc:
                    out[mono] = nc
                else:
                    out.pop(mono, None)
    result = Expr(out)
    for mono, c, deferred in pending:
        piece = Expr({mono: c})
        for inner, e in deferred:
            piece = _mul(piece, _pow(inner, e))
        result = result + piece
    return result


def _pow(base, n):
    if n == 0:
        return ONE
    if n < 0:
        return _div(ONE, _pow(base, -n))
    result = None
    acc = base
    while n:
        if n & 1:
            result = acc if result is None else _mul(result, acc)
        n >>= 1
        if n:
            acc = _mul(acc, acc)
    return result


def _fraction_gcd(a, b):
    return Fraction(math.gcd(a.numerator, b.numerator),
                    math.lcm(a.denominator, b.denominator))


def _primitive(e):
    """Factor ``e`` as ``scale * primitive`` with normalized leading sign."""
    items = sorted(e.terms().items(), key=lambda it: _mono_pkey(it[0]))
    content = _ZERO
    for _, c in items:
        content = _fraction_gcd(content, abs(c)) if content else abs(c)
    if items[0][1] < 0:
        content = -content
    prim = Expr({m: c / content for m, c in items})
    return content, prim


def _invert_mono(mono, coeff):
    """Expression equal to 1 / (coeff * mono)."""
    plain = []
    pos_sums = []
    for atom, e in mono:
        if atom[0] == "s" and e < 0:
            pos_sums.append((atom[1], -e))
        else:
            plain.append((atom, -e))
    result = Expr({tuple(plain): 1 / coeff})
    for inner, e in pos_sums:
        result = _mul(result, _pow(inner, e))
    return result


def _common_mono(terms):
    """Monomial factor shared by all terms (same-sign exponents only)."""
    monos = list(terms)
    shared = {}
    for atom, e in monos[0]:
        shared[_atom_pkey(atom)] = (atom, e)
    for mono in monos[1:]:
        present = {_atom_pkey(a): (a, e) for a, e in mono}
        for key in list(shared):
            if key not in present:
                del shared[key]
                continue
            atom, e1 = shared[key]
            e2 = present[key][1]
            if e1 > 0 and e2 > 0:
                shared[key] = (atom, min(e1, e2))
            elif e1 < 0 and e2 < 0:
                shared[key] = (atom, max(e1, e2))
            else:
                del shared[key]
        if not shared:
            break
    return tuple(sorted(shared.values(), key=lambda it: _atom_pkey(it[0])))


def _strip_mono(terms, common):
    """Divide every term by the common monomial (exponent subtraction)."""
    removal = {_atom_pkey(a): e for a, e in common}
    out = {}
    for mono, c in terms.items():
        reduced = []
        for atom, e in mono:
            e -= removal.get(_atom_pkey(atom), 0)
            if e:
                reduced.append((atom, e))
        out[tuple(reduced)] = c
    return Expr(out)


def _div(num, den):
    if den.is_zero:
        raise ExpressionError("division by zero expression")
    if num.is_zero:
        return ZERO
    terms = den.terms()
    if len(terms) == 1:
        ((mono, coeff),) = terms.items()
        return _mul(num, _invert_mono(mono, coeff))
    common = _common_mono(terms)
    if common:
        num = _mul(num, _invert_mono(common, _ONE))
        den = _strip_mono(terms, common)
    scale, prim = _primitive(den)
    if num.pkey == prim.pkey:
        return const(1 / scale)
    mono = ((("s", prim), -1),)
    return _mul(num, Expr({mono: 1 / scale}))


# function application ------------------------------------------------------

def _call(fname, arg):
    if arg.is_constant:
        c = arg.constant_value()
        if c == 0:
            return {"sin": ZERO, "cos": ONE, "exp": ONE, "sqrt": ZERO}[fname]
        if fname == "sqrt":
            if c < 0:
                raise ExpressionError("sqrt of a negative constant")
            root = Fraction(
                math.isqrt(c.numerator), math.isqrt(c.denominator))
            if root * root == c:
                return const(root)
    atom = ("f", fname, arg)
    return Expr({((atom, 1),): _ONE})


def sin(arg):
    return _call("sin", _coerce(arg))


def cos(arg):
    return _call("cos", _coerce(arg))


def exp(arg):
    return _call("exp", _coerce(arg))


def sqrt(arg):
    return _call("sqrt", _coerce(arg))


def apply_function(fname, arg):
    if fname not in FUNCTIONS:
        raise ExpressionError(f"unknown function {fname!r}")
    return _call(fname, _coerce(arg))


# differentiation -----------------------------------------------------------

_diff_cache = {}


def _atom_diff(atom, name):
    kind = atom[0]
    if kind == "v":
        return ONE if atom[1] == name else ZERO
    if kind == "f":
        fname, arg = atom[1], atom[2]
        darg = diff(arg, name)
        if darg.is_zero:
            return ZERO
        if fname == "sin":
            return _mul(_call("cos", arg), darg)
        if fname == "cos":
            return -_mul(_call("sin", arg), darg)
        if fname == "exp":
            return _mul(_call("exp", arg), darg)
        outer = _div(const(Fraction(1, 2)), _call("sqrt", arg))
        return _mul(outer, darg)
    return diff(atom[1], name)


def diff(e, name):
    """Exact partial derivative of ``e`` with respect to coordinate ``name``."""
    key = (e, name)
    cached = _diff_cache.get(key)
    if cached is not None:
        return cached
    total = ZERO
    for mono, c in e.terms().items():
        for i, (atom, k) in enumerate(mono):
            da = _atom_diff(atom, name)
            if da.is_zero:
                continue
            rest = list(mono)
            if k == 1:
                del rest[i]
            else:
                rest[i] = (atom, k - 1)
            total = total + _mul(Expr({tuple(rest): c * k}), da)
    _diff_cache[key] = total
    return total


# substitution ---------------------------------------------------------------

def subs(e, mapping):
    """Substitute coordinate names by expressions (simultaneously)."""
    mapping = {k: _coerce(v) for k, v in mapping.items()}
    total = ZERO
    for mono, c in e.terms().items():
        term = const(c)
        for atom, k in mono:
            term = _mul(term, _pow(_atom_subs(atom, mapping), k))
            if term.is_zero:
                break
        total = total + term
    return total


def _atom_subs(atom, mapping):
    kind = atom[0]
    if kind == "v":
        repl = mapping.get(atom[1])
        return repl if repl is not None else Expr({((atom, 1),): _ONE})
    if kind == "f":
        return _call(atom[1], subs(atom[2], mapping))
    return subs(atom[1], mapping)


# plain evaluation (slow path; batch evaluation lives in engine.py) ----------

def evalf(e, env):
    """Evaluate at a single point given ``{name: float}``."""
    total = 0.0
    for mono, c in e.terms().items():
        v = float(c)
        for atom, k in mono:
            v *= _atom_evalf(atom, env) ** k
        total += v
    return total


def _atom_evalf(atom, env):
    kind = atom[0]
    if kind == "v":
        return env[atom[1]]
    if kind == "f":
        inner = evalf(atom[2], env)
        return getattr(math, atom[1])(inner)
    return evalf(atom[1], env)


# printing --------------------------------------------------------------------

def _factor_text(atom, e):
    kind = atom[0]
    if kind == "v":
        base = atom[1]
    elif kind == "f":
        base = f"{atom[1]}({to_text(atom[2])})"
    else:
        base = f"({to_text(atom[1])})"
    return base if e == 1 else f"{base}^{e}"


def _term_text(mono, c):
    num = []
    den = []
    for atom, e in mono:
        (num if e > 0 else den).append(_factor_text(atom, abs(e)))
    coeff = abs(c)
    if coeff.numerator != 1 or not num:
        num.insert(0, str(coeff.numerator))
    if coeff.denominator != 1:
        den.insert(0, str(coeff.denominator))
    text = "*".join(num) if num else "1"
    for d in den:
        text += f"/{d}"
    return text


def to_text(e):
    """Canonical textual form, parseable by :func:`parse`."""
    if e.is_zero:
        return "0"
    items = sorted(e.terms().items(), key=lambda it: _mono_pkey(it[0]))
    parts = []
    for i, (mono, c) in enumerate(items):
        body = _term_text(mono, c)
        if i == 0:
            parts.append(body if c > 0 else f"-{body}")
        else:
            parts.append(f" + {body}" if c > 0 else f" - {body}")
    return "".join(parts)


# parser ----------------------------------------------------------------------

class _Tokenizer:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.tokens = []
        self._scan()
        self.index = 0

    def _position(self, pos):
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def _scan(self):
        text = self.text
        i = 0
        while i < len(text):
            ch = text[i]
            if ch.isspace():
                i += 1
                continue
            if ch.isdigit() or (ch == "." and i + 1 < len(text) and text[i + 1].isdigit()):
                j = i
                while j < len(text) and (text[j].isdigit() or text[j] == "."):
                    j += 1
                if j < len(text) and text[j] in "eE":
                    k = j + 1
                    if k < len(text) and text[k] in "+-":
                        k += 1
                    if k < len(text) and text[k].isdigit():
                        while k < len(text) and text[k].isdigit():
                            k += 1
                        j = k
                self.tokens.append(("number", text[i:j], i))
                i = j
                continue
            if ch.isalpha() or ch == "_":
                j = i
                while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                self.tokens.append(("ident", text[i:j], i))
                i = j
                continue
            if ch in "+-*/^()":
                self.tokens.append((ch, ch, i))
                i += 1
                continue
            line, col = self._position(i)
            raise ExpressionError(f"unexpected character {ch!r}", line, col)
        self.tokens.append(("end", "", len(text)))

    def peek(self):
        return self.tokens[self.index]

    def next(self):
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def error(self, message, token):
        line, col = self._position(token[2])
        raise ExpressionError(message, line, col)


class Parser:
    """Recursive-descent parser for the coefficient expression grammar.

    Grammar::

        expr   := term (('+'|'-') term)*
        term   := factor (('*'|'/') factor)*
        factor := '-'? atom ('^' int)?
        atom   := number | ident | func '(' expr ')' | '(' expr ')'
        func   := 'sin' | 'cos' | 'exp' | 'sqrt'

    Identifiers must be declared coordinates.
    """

    def __init__(self, coordinates):
        self.coordinates = tuple(coordinates)
        self._coord_set = set(self.coordinates)

    def parse(self, text):
        toks = _Tokenizer(text)
        value = self._expr(toks)
        tok = toks.peek()
        if tok[0] != "end":
            toks.error(f"unexpected token {tok[1]!r}", tok)
        return value

    def _expr(self, toks):
        value = self._term(toks)
        while toks.peek()[0] in ("+", "-"):
            op = toks.next()[0]
            rhs = self._term(toks)
            value = value + rhs if op == "+" else value - rhs
        return value

    def _term(self, toks):
        value = self._factor(toks)
        while toks.peek()[0] in ("*", "/"):
            op = toks.next()[0]
            rhs = self._factor(toks)
            if op == "*":
                value = value * rhs
            else:
                tok = toks.peek()
                try:
                    value = value / rhs
                except ExpressionError:
                    toks.error("division by zero expression", tok)
        return value

    def _factor(self, toks):
        negate = False
        if toks.peek()[0] == "-":
            toks.next()
            negate = True
        value = self._atom(toks)
        if toks.peek()[0] == "^":
            toks.next()
            sign = 1
            if toks.peek()[0] == "-":
                toks.next()
                sign = -1
            tok = toks.next()
            if tok[0] != "number" or not tok[1].isdigit():
                toks.error("expected integer exponent after '^'", tok)
            value = value ** (sign * int(tok[1]))
        return -value if negate else value

    def _atom(self, toks):
        tok = toks.next()
        if tok[0] == "number":
            try:
                return const(Fraction(tok[1]))
            except ValueError:
                toks.error(f"bad number literal {tok[1]!r}", tok)
        if tok[0] == "ident":
            name = tok[1]
            if name in FUNCTIONS:
                opening = toks.next()
                if opening[0] != "(":
                    toks.error(f"expected '(' after {name}", opening)
                inner = self._expr(toks)
                closing = toks.next()
                if closing[0] != ")":
                    toks.error("expected ')'", closing)
                return apply_function(name, inner)
            if name not in self._coord_set:
                toks.error(f"undeclared identifier {name!r}", tok)
            return var(name)
        if tok[0] == "(":
            inner = self._expr(toks)
            closing = toks.next()
            if closing[0] != ")":
                toks.error("expected ')'", closing)
            return inner
        toks.error(f"unexpected token {tok[1] or 'end of input'!r}", tok)


def parse(text, coordinates):
    """Parse ``text`` over the declared ``coordinates``."""
    return Parser(coordinates).parse(text)
