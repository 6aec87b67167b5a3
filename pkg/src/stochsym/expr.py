"""Small symbolic expression engine over the variables x, t, w.

Expressions are immutable trees built from rational/float constants, the
three reserved variables, named parameters, sums, products, powers, exp,
log and a definite-integral node ``IntegralT`` representing
``int_0^t g(s) ds`` for integrands in t alone (used when a function of t
is only known through its logarithmic derivative).

``log(u)`` always means the natural logarithm of ``|u|``; the state
variable x is restricted to x > 0 throughout, so rewrites such as
``exp(c*log(x)) -> x^c`` are sound.

All operations are pure; expressions may be shared freely across threads.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Union

import numpy as np

Number = Union[int, float, Fraction]

VARIABLES = ("x", "t", "w")


class ExprError(Exception):
    """Base class for expression-engine errors."""


class DomainError(ExprError):
    """Evaluation left the expression's real domain (log 0, 0^negative, ...)."""


class UnboundParameterError(ExprError):
    """A parameter had no value in the supplied bindings."""


class ParseError(ExprError):
    """Syntax error; carries the byte offset and the expected-token set."""

    def __init__(self, message: str, offset: int, expected: tuple = ()):
        super().__init__(f"{message} at offset {offset}"
                         + (f" (expected {', '.join(expected)})" if expected else ""))
        self.offset = offset
        self.expected = expected


# ---------------------------------------------------------------------------
# Node types
# ---------------------------------------------------------------------------

class Expr:
    __slots__ = ("_hash", "_key", "_skey")

    def __init__(self):
        self._hash = None
        self._key = None
        self._skey = None

    # identity key: exact structural identity, used for __eq__/__hash__
    def _identity(self):
        raise NotImplementedError

    def key(self):
        if self._key is None:
            self._key = self._identity()
        return self._key

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.key())
        return self._hash

    def __repr__(self):
        return format_expr(self)

    __str__ = __repr__

    # convenience operators build *raw* nodes; canonicalize via simplify()
    def _coerce(self, other):
        if isinstance(other, Expr):
            return other
        if isinstance(other, (int, Fraction)):
            return Constant(Fraction(other))
        if isinstance(other, float):
            return Constant(other)
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Sum((self, o))

    def __radd__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Sum((o, self))

    def __sub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Sum((self, Neg(o)))

    def __rsub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Sum((o, Neg(self)))

    def __mul__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Product((self, o))

    def __rmul__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Product((o, self))

    def __truediv__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Product((self, Power(o, MINUS_ONE)))

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Product((o, Power(self, MINUS_ONE)))

    def __pow__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else Power(self, o)

    def __neg__(self):
        return Neg(self)


class Constant(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Number):
        super().__init__()
        if isinstance(value, int):
            value = Fraction(value)
        if not isinstance(value, (Fraction, float)):
            raise TypeError(f"Constant value must be rational or float, got {type(value)}")
        self.value = value

    def _identity(self):
        if isinstance(self.value, Fraction):
            return ("c", "q", self.value.numerator, self.value.denominator)
        return ("c", "f", repr(self.value))


class Variable(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        super().__init__()
        if name not in VARIABLES:
            raise ValueError(f"unknown variable {name!r}; must be one of {VARIABLES}")
        self.name = name

    def _identity(self):
        return ("v", self.name)


class Parameter(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        super().__init__()
        self.name = name

    def _identity(self):
        return ("p", self.name)


class Sum(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Expr]):
        super().__init__()
        self.terms = tuple(terms)

    def _identity(self):
        return ("+",) + tuple(t.key() for t in self.terms)


class Product(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: Iterable[Expr]):
        super().__init__()
        self.factors = tuple(factors)

    def _identity(self):
        return ("*",) + tuple(f.key() for f in self.factors)


class Power(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: Expr):
        super().__init__()
        self.base = base
        self.exponent = exponent

    def _identity(self):
        return ("^", self.base.key(), self.exponent.key())


class Exp(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        super().__init__()
        self.arg = arg

    def _identity(self):
        return ("exp", self.arg.key())


class Log(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        super().__init__()
        self.arg = arg

    def _identity(self):
        return ("log", self.arg.key())


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        super().__init__()
        self.arg = arg

    def _identity(self):
        return ("neg", self.arg.key())


class IntegralT(Expr):
    """Definite integral of a t-only integrand from 0 to t.

    Evaluated numerically by adaptive quadrature; differentiates to the
    integrand.  Never produced by the parser for user input; printed as
    ``intt(...)`` which the parser accepts back.
    """

    __slots__ = ("integrand",)

    def __init__(self, integrand: Expr):
        super().__init__()
        fv = free_variables(integrand)
        if "x" in fv or "w" in fv:
            raise ValueError("IntegralT integrand must depend on t only")
        self.integrand = integrand

    def _identity(self):
        return ("intt", self.integrand.key())


X = Variable("x")
T = Variable("t")
W = Variable("w")
ZERO = Constant(Fraction(0))
ONE = Constant(Fraction(1))
TWO = Constant(Fraction(2))
MINUS_ONE = Constant(Fraction(-1))
HALF = Constant(Fraction(1, 2))


def number(v: Number) -> Constant:
    return Constant(Fraction(v) if isinstance(v, int) else v)


# ---------------------------------------------------------------------------
# Basic structural queries
# ---------------------------------------------------------------------------

def children(e: Expr) -> tuple:
    if isinstance(e, Sum):
        return e.terms
    if isinstance(e, Product):
        return e.factors
    if isinstance(e, Power):
        return (e.base, e.exponent)
    if isinstance(e, (Exp, Log, Neg)):
        return (e.arg,)
    if isinstance(e, IntegralT):
        return (e.integrand,)
    return ()


def free_variables(e: Expr) -> set:
    if isinstance(e, Variable):
        return {e.name}
    out = set()
    for c in children(e):
        out |= free_variables(c)
    return out


def parameters(e: Expr) -> set:
    if isinstance(e, Parameter):
        return {e.name}
    out = set()
    for c in children(e):
        out |= parameters(c)
    return out


def contains_var(e: Expr, name: str) -> bool:
    return name in free_variables(e)


def contains_integral(e: Expr) -> bool:
    if isinstance(e, IntegralT):
        return True
    return any(contains_integral(c) for c in children(e))


def _const_value(e: Expr):
    return e.value if isinstance(e, Constant) else None


def is_zero(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 0


def is_one(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 1


def _is_integer_constant(e: Expr) -> bool:
    if not isinstance(e, Constant):
        return False
    v = e.value
    if isinstance(v, Fraction):
        return v.denominator == 1
    return float(v).is_integer()


# sign analysis: "pos" (> 0 everywhere on the domain), "nonneg", or None
def _sign(e: Expr):
    if isinstance(e, Constant):
        if e.value > 0:
            return "pos"
        if e.value == 0:
            return "nonneg"
        return None
    if isinstance(e, Variable):
        if e.name == "x":
            return "pos"     # state domain is x > 0
        if e.name == "t":
            return "nonneg"  # time runs forward from 0
        return None
    if isinstance(e, Exp):
        return "pos"
    if isinstance(e, Power):
        bs = _sign(e.base)
        if bs == "pos":
            return "pos"
        if _is_integer_constant(e.exponent):
            n = int(e.exponent.value)
            if n % 2 == 0:
                return "nonneg"
        return None
    if isinstance(e, Product):
        sgns = [_sign(f) for f in e.factors]
        if any(s is None for s in sgns):
            return None
        return "pos" if all(s == "pos" for s in sgns) else "nonneg"
    if isinstance(e, Sum):
        sgns = [_sign(t) for t in e.terms]
        if any(s is None for s in sgns):
            return None
        return "pos" if any(s == "pos" for s in sgns) else "nonneg"
    return None


def is_positive(e: Expr) -> bool:
    return _sign(e) == "pos"


# ---------------------------------------------------------------------------
# Deterministic total ordering for canonical forms
# ---------------------------------------------------------------------------

_RANK = {Constant: 0, Variable: 1, Parameter: 2, Power: 3, Exp: 4, Log: 5,
         IntegralT: 6, Product: 7, Sum: 8, Neg: 9}


def sort_key(e: Expr):
    if e._skey is not None:
        return e._skey
    if isinstance(e, Constant):
        k = (0, (float(e.value),), str(e.key()))
    elif isinstance(e, Variable):
        k = (1, (), e.name)
    elif isinstance(e, Parameter):
        k = (2, (), e.name)
    else:
        k = (_RANK[type(e)], tuple(sort_key(c) for c in children(e)), "")
    e._skey = k
    return k


# ---------------------------------------------------------------------------
# Canonicalizing constructors
# ---------------------------------------------------------------------------

def _num_add(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a + b
    return float(a) + float(b)  # mixed arithmetic promotes to double


def _num_mul(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a * b
    return float(a) * float(b)


def _split_coeff(term: Expr):
    """Split a canonical term into (numeric coefficient, monomial)."""
    if isinstance(term, Constant):
        return term.value, ONE
    if isinstance(term, Product):
        f0 = term.factors[0]
        if isinstance(f0, Constant):
            rest = term.factors[1:]
            if len(rest) == 1:
                return f0.value, rest[0]
            return f0.value, Product(rest)
        return Fraction(1), term
    return Fraction(1), term


def _with_coeff(coeff, monomial: Expr) -> Expr:
    if coeff == 0:
        return ZERO
    if is_one(monomial):
        return Constant(coeff)
    if coeff == 1 and isinstance(coeff, Fraction):
        return monomial
    if isinstance(monomial, Product):
        return Product((Constant(coeff),) + monomial.factors)
    return Product((Constant(coeff), monomial))


def make_sum(terms: Iterable[Expr]) -> Expr:
    # flatten, fold constants, collect like monomials
    flat = []
    stack = list(terms)[::-1]
    while stack:
        t = stack.pop()
        if isinstance(t, Sum):
            stack.extend(t.terms[::-1])
        elif not is_zero(t):
            flat.append(t)
    by_monomial = {}
    order = []
    for t in flat:
        c, m = _split_coeff(t)
        if m in by_monomial:
            by_monomial[m] = _num_add(by_monomial[m], c)
        else:
            by_monomial[m] = c
            order.append(m)
    out = []
    for m in order:
        c = by_monomial[m]
        if c == 0 and isinstance(c, Fraction):
            continue
        if isinstance(c, float) and c == 0.0:
            continue
        out.append(_with_coeff(c, m))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    out.sort(key=sort_key)
    return Sum(tuple(out))


def _merge_power_ok(base: Expr, e1: Expr, e2: Expr) -> bool:
    if is_positive(base):
        return True
    return _is_integer_constant(e1) and _is_integer_constant(e2)


def make_product(factors: Iterable[Expr]) -> Expr:
    flat = []
    stack = list(factors)[::-1]
    while stack:
        f = stack.pop()
        if isinstance(f, Product):
            stack.extend(f.factors[::-1])
        elif not is_one(f):
            flat.append(f)
    coeff = Fraction(1)
    exp_args = []          # accumulated Exp(...) arguments
    pow_by_base = {}       # base -> exponent expr (merged when sound)
    base_order = []
    passthrough = []       # factors kept as-is (unsafe merges)
    for f in flat:
        if isinstance(f, Constant):
            if f.value == 0:
                return ZERO
            coeff = _num_mul(coeff, f.value)
            continue
        if isinstance(f, Exp):
            exp_args.append(f.arg)
            continue
        if isinstance(f, Power):
            b, e = f.base, f.exponent
        else:
            b, e = f, ONE
        if b in pow_by_base:
            if _merge_power_ok(b, pow_by_base[b], e):
                pow_by_base[b] = make_sum([pow_by_base[b], e])
            else:
                passthrough.append(f)
        else:
            pow_by_base[b] = e
            base_order.append(b)
    parts = list(passthrough)
    for b in base_order:
        e = pow_by_base[b]
        p = make_power(b, e)
        if is_zero(p):
            return ZERO
        if not is_one(p):
            parts.append(p)
    if exp_args:
        p = make_exp(make_sum(exp_args))
        if not is_one(p):
            parts.append(p)
    # one distribution step over a bare Sum factor keeps forms expanded,
    # which the like-term collection in make_sum relies on for cancellation
    for i, p in enumerate(parts):
        if isinstance(p, Sum):
            rest = parts[:i] + parts[i + 1:] + ([Constant(coeff)] if coeff != 1 else [])
            return make_sum([make_product(list(rest) + [t]) for t in p.terms])
    if coeff == 0:
        return ZERO
    parts.sort(key=sort_key)
    if coeff != 1 or not parts:
        parts = [Constant(coeff)] + parts
    if len(parts) == 1:
        return parts[0]
    return Product(tuple(parts))


def _rational_pow(v, n: int):
    if isinstance(v, Fraction):
        return v ** n if (n >= 0 or v != 0) else None
    try:
        return float(v) ** n
    except ZeroDivisionError:
        return None


def _sum_content(s: Sum):
    """Positive rational content of a sum with all-rational coefficients,
    or None when there is nothing to extract."""
    nums, dens = [], []
    for t in s.terms:
        c, _m = _split_coeff(t)
        if not isinstance(c, Fraction):
            return None
        nums.append(abs(c.numerator))
        dens.append(c.denominator)
    g = 0
    for n in nums:
        g = math.gcd(g, n)
    if g == 0:
        return None
    lcm = 1
    for d in dens:
        lcm = lcm * d // math.gcd(lcm, d)
    content = Fraction(g, lcm)
    return content if content != 1 else None


def make_power(base: Expr, exponent: Expr) -> Expr:
    if is_zero(exponent):
        return ONE
    if is_one(exponent):
        return base
    if is_one(base):
        return ONE
    if isinstance(base, Constant) and _is_integer_constant(exponent):
        v = _rational_pow(base.value, int(exponent.value))
        if v is not None:
            return Constant(v)
    if is_zero(base):
        return ZERO  # exponent != 0 here; negative exponents are eval-time errors
    if isinstance(base, Exp):
        return make_exp(make_product([base.arg, exponent]))
    if isinstance(base, Power):
        inner_b, inner_e = base.base, base.exponent
        if is_positive(inner_b) or _is_integer_constant(exponent):
            return make_power(inner_b, make_product([inner_e, exponent]))
    if isinstance(base, Product) and _is_integer_constant(exponent):
        return make_product([make_power(f, exponent) for f in base.factors])
    if isinstance(base, Sum):
        # normalize the content so e.g. (4 + 2t)^n merges with (2 + t)^n
        content = _sum_content(base)
        if content is not None:
            inv = Constant(Fraction(1) / content)
            scaled = make_sum([make_product([inv, t]) for t in base.terms])
            return make_product([make_power(Constant(content), exponent),
                                 make_power(scaled, exponent)])
    return Power(base, exponent)


def make_exp(arg: Expr) -> Expr:
    if is_zero(arg):
        return ONE
    if isinstance(arg, Log):
        if is_positive(arg.arg):
            return arg.arg
    # exp(c*log(u) + rest) -> u^c * exp(rest) for positive u
    terms = arg.terms if isinstance(arg, Sum) else (arg,)
    powers = []
    rest = []
    for t in terms:
        if isinstance(t, Log) and is_positive(t.arg):
            powers.append((t.arg, ONE))
        elif isinstance(t, Product):
            logs = [f for f in t.factors if isinstance(f, Log) and is_positive(f.arg)]
            if len(logs) == 1:
                others = tuple(f for f in t.factors if f is not logs[0])
                c = others[0] if len(others) == 1 else Product(others)
                powers.append((logs[0].arg, c))
            else:
                rest.append(t)
        else:
            rest.append(t)
    if powers:
        parts = [make_power(u, c) for (u, c) in powers]
        if rest:
            parts.append(Exp(make_sum(rest)))
        return make_product(parts)
    return Exp(arg)


def make_log(arg: Expr) -> Expr:
    if is_one(arg):
        return ZERO
    if isinstance(arg, Exp):
        return arg.arg  # log|e^u| = u
    if isinstance(arg, Power) and is_positive(arg.base):
        return make_product([arg.exponent, make_log(arg.base)])
    return Log(arg)


# ---------------------------------------------------------------------------
# simplify
# ---------------------------------------------------------------------------

_simplify_cache: dict = {}


def clear_caches():
    _simplify_cache.clear()
    _quad_cache.clear()


def simplify(e: Expr) -> Expr:
    """Canonical form: flattened, sorted, constant-folded, like terms merged.

    Idempotent; structural equality of canonical forms implies pointwise
    numeric equality on the common domain.
    """
    cached = _simplify_cache.get(e)
    if cached is not None:
        return cached
    if isinstance(e, (Constant, Variable, Parameter)):
        out = e
    elif isinstance(e, Sum):
        out = make_sum([simplify(t) for t in e.terms])
    elif isinstance(e, Product):
        out = make_product([simplify(f) for f in e.factors])
    elif isinstance(e, Power):
        out = make_power(simplify(e.base), simplify(e.exponent))
    elif isinstance(e, Exp):
        out = make_exp(simplify(e.arg))
    elif isinstance(e, Log):
        out = make_log(simplify(e.arg))
    elif isinstance(e, Neg):
        out = make_product([MINUS_ONE, simplify(e.arg)])
    elif isinstance(e, IntegralT):
        g = simplify(e.integrand)
        out = ZERO if is_zero(g) else IntegralT(g)
    else:  # pragma: no cover
        raise TypeError(f"unknown node {type(e)}")
    _simplify_cache[e] = out
    _simplify_cache[out] = out
    return out


# ---------------------------------------------------------------------------
# differentiate
# ---------------------------------------------------------------------------

def differentiate(e: Expr, var: str) -> Expr:
    """Partial derivative with respect to one of x, t, w (parameters are constants)."""
    if var not in VARIABLES:
        raise ValueError(f"can only differentiate in {VARIABLES}, got {var!r}")
    return simplify(_diff(simplify(e), var))


def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, (Constant, Parameter)):
        return ZERO
    if isinstance(e, Variable):
        return ONE if e.name == v else ZERO
    if isinstance(e, Sum):
        return make_sum([_diff(t, v) for t in e.terms])
    if isinstance(e, Product):
        terms = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = _diff(f, v)
            if not is_zero(df):
                terms.append(make_product(list(fs[:i]) + [df] + list(fs[i + 1:])))
        return make_sum(terms)
    if isinstance(e, Power):
        b, n = e.base, e.exponent
        db = _diff(b, v)
        dn = _diff(n, v)
        parts = []
        if not is_zero(db):
            # n * b^(n-1) * b'
            parts.append(make_product([n, make_power(b, make_sum([n, MINUS_ONE])), db]))
        if not is_zero(dn):
            # b^n * log(b) * n'
            parts.append(make_product([make_power(b, n), make_log(b), dn]))
        return make_sum(parts)
    if isinstance(e, Exp):
        return make_product([make_exp(e.arg), _diff(e.arg, v)])
    if isinstance(e, Log):
        # d log|u| = u'/u
        return make_product([_diff(e.arg, v), make_power(e.arg, MINUS_ONE)])
    if isinstance(e, Neg):
        return make_product([MINUS_ONE, _diff(e.arg, v)])
    if isinstance(e, IntegralT):
        return e.integrand if v == "t" else ZERO
    raise TypeError(f"unknown node {type(e)}")  # pragma: no cover


# ---------------------------------------------------------------------------
# substitute
# ---------------------------------------------------------------------------

def substitute(e: Expr, target: Union[Expr, str], replacement: Expr) -> Expr:
    """Replace a Variable or Parameter by an expression, then simplify."""
    if isinstance(target, str):
        target = Variable(target) if target in VARIABLES else Parameter(target)
    if not isinstance(target, (Variable, Parameter)):
        raise TypeError("substitution target must be a Variable or Parameter")
    return simplify(_subst(e, target, replacement))


def _subst(e: Expr, target: Expr, rep: Expr) -> Expr:
    if e == target:
        return rep
    if isinstance(e, (Constant, Variable, Parameter)):
        return e
    if isinstance(e, IntegralT):
        # the integration variable shadows t inside the integrand
        if isinstance(target, Variable) and target.name == "t":
            raise ExprError("cannot substitute for t under an intt(...) node")
        return IntegralT(_subst(e.integrand, target, rep))
    if isinstance(e, Sum):
        return Sum(tuple(_subst(t, target, rep) for t in e.terms))
    if isinstance(e, Product):
        return Product(tuple(_subst(f, target, rep) for f in e.factors))
    if isinstance(e, Power):
        return Power(_subst(e.base, target, rep), _subst(e.exponent, target, rep))
    if isinstance(e, Exp):
        return Exp(_subst(e.arg, target, rep))
    if isinstance(e, Log):
        return Log(_subst(e.arg, target, rep))
    if isinstance(e, Neg):
        return Neg(_subst(e.arg, target, rep))
    raise TypeError(f"unknown node {type(e)}")  # pragma: no cover


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

_quad_cache: dict = {}


def _eval_integral(node: IntegralT, t, bindings) -> float:
    from scipy.integrate import quad

    key = (node, float(t), tuple(sorted(bindings.items())) if bindings else ())
    hit = _quad_cache.get(key)
    if hit is not None:
        return hit
    g = node.integrand

    def f(s):
        return evaluate(g, t=s, bindings=bindings)

    val, _err = quad(f, 0.0, float(t), epsabs=1e-12, epsrel=1e-12, limit=200)
    _quad_cache[key] = val
    return val


def evaluate(e: Expr, x=None, t=None, w=None, bindings=None):
    """IEEE double evaluation; accepts scalars or numpy arrays for x, t, w.

    Raises DomainError on log(0), 0^negative or a negative base under a
    non-integer exponent, and UnboundParameterError for missing parameters;
    never silently propagates NaN.
    """
    env = {"x": x, "t": t, "w": w}
    out = _eval(e, env, bindings or {})
    if np.any(~np.isfinite(np.asarray(out, dtype=float))):
        raise DomainError(f"non-finite value while evaluating {format_expr(e)}")
    return out


def _eval(e: Expr, env, bindings):
    if isinstance(e, Constant):
        return float(e.value)
    if isinstance(e, Variable):
        v = env[e.name]
        if v is None:
            raise ExprError(f"no value supplied for variable {e.name}")
        return v
    if isinstance(e, Parameter):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnboundParameterError(f"parameter {e.name!r} is unbound") from None
    if isinstance(e, Sum):
        acc = _eval(e.terms[0], env, bindings)
        for t in e.terms[1:]:
            acc = acc + _eval(t, env, bindings)
        return acc
    if isinstance(e, Product):
        acc = _eval(e.factors[0], env, bindings)
        for f in e.factors[1:]:
            acc = acc * _eval(f, env, bindings)
        return acc
    if isinstance(e, Power):
        b = _eval(e.base, env, bindings)
        p = _eval(e.exponent, env, bindings)
        b_arr, p_arr = np.asarray(b, dtype=float), np.asarray(p, dtype=float)
        integer_exp = np.all(p_arr == np.floor(p_arr))
        if np.any((b_arr == 0) & (p_arr < 0)):
            raise DomainError("0 raised to a negative power")
        if not integer_exp and np.any(b_arr < 0):
            raise DomainError("negative base under a non-integer exponent")
        return b ** p
    if isinstance(e, Exp):
        return np.exp(_eval(e.arg, env, bindings)) if _is_arr(e, env) else math.exp(_eval(e.arg, env, bindings))
    if isinstance(e, Log):
        u = _eval(e.arg, env, bindings)
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr == 0):
            raise DomainError("log of zero")
        return np.log(np.abs(u)) if isinstance(u, np.ndarray) else math.log(abs(u))
    if isinstance(e, Neg):
        return -_eval(e.arg, env, bindings)
    if isinstance(e, IntegralT):
        tv = env["t"]
        if tv is None:
            raise ExprError("no value supplied for variable t")
        arr = np.asarray(tv, dtype=float)
        if arr.ndim == 0:
            return _eval_integral(e, float(arr), bindings)
        flat = np.array([_eval_integral(e, ti, bindings) for ti in arr.ravel()])
        return flat.reshape(arr.shape)
    raise TypeError(f"unknown node {type(e)}")  # pragma: no cover


def _is_arr(e, env):
    return any(isinstance(v, np.ndarray) for v in env.values())


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_FUNCTIONS = ("exp", "log", "intt")


class _Tokenizer:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0
        self.tokens = []
        self._scan()
        self.idx = 0

    def _scan(self):
        s, n = self.src, len(self.src)
        i = 0
        while i < n:
            ch = s[i]
            if ch.isspace():
                i += 1
                continue
            if ch in "+-*/^()":
                self.tokens.append((ch, ch, i))
                i += 1
                continue
            if ch.isdigit() or (ch == "." and i + 1 < n and s[i + 1].isdigit()):
                j = i
                while j < n and (s[j].isdigit() or s[j] == "."):
                    j += 1
                if j < n and s[j] in "eE" and (j + 1 < n and (s[j + 1].isdigit() or
                                               (s[j + 1] in "+-" and j + 2 < n and s[j + 2].isdigit()))):
                    j += 2
                    while j < n and s[j].isdigit():
                        j += 1
                self.tokens.append(("num", s[i:j], i))
                i = j
                continue
            if ch.isalpha() or ch == "_":
                j = i
                while j < n and (s[j].isalnum() or s[j] == "_"):
                    j += 1
                self.tokens.append(("ident", s[i:j], i))
                i = j
                continue
            raise ParseError(f"unexpected character {ch!r}", i)
        self.tokens.append(("end", "", n))

    def peek(self):
        return self.tokens[self.idx]

    def next(self):
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect(self, kind):
        tok = self.peek()
        if tok[0] != kind:
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2], (kind,))
        return self.next()


def _parse_number(text: str, offset: int) -> Constant:
    # exact rationals where the literal permits (decimal and scientific forms)
    from decimal import Decimal, InvalidOperation
    try:
        return Constant(Fraction(Decimal(text)))
    except InvalidOperation:
        raise ParseError(f"bad number literal {text!r}", offset) from None


def parse(source: str) -> Expr:
    """Parse the expression grammar.

    expr := term (('+'|'-') term)*; term := factor (('*'|'/') factor)*;
    factor := '-' factor | atom ('^' factor)?; atom := number | ident |
    '(' expr ')' | ident '(' expr ')'.  Reserved idents: x, t, w; known
    functions: exp, log (and intt for reparsing printed output); every
    other ident is a Parameter.  Returns the raw AST (no simplification
    beyond flattening chains and folding negated number literals).
    """
    tz = _Tokenizer(source)
    e = _parse_expr(tz)
    tok = tz.peek()
    if tok[0] != "end":
        raise ParseError(f"trailing input {tok[1]!r}", tok[2], ("end",))
    return e


def _parse_expr(tz) -> Expr:
    terms = [_parse_term(tz)]
    while tz.peek()[0] in ("+", "-"):
        op = tz.next()[0]
        rhs = _parse_term(tz)
        terms.append(_negate(rhs) if op == "-" else rhs)
    return terms[0] if len(terms) == 1 else Sum(tuple(terms))


def _negate(e: Expr) -> Expr:
    if isinstance(e, Constant):
        return Constant(-e.value)
    return Neg(e)


def _parse_term(tz) -> Expr:
    factors = [_parse_factor(tz)]
    while tz.peek()[0] in ("*", "/"):
        op = tz.next()[0]
        rhs = _parse_factor(tz)
        if op == "/":
            if isinstance(factors[-1], Constant) and isinstance(rhs, Constant) \
                    and isinstance(factors[-1].value, Fraction) and isinstance(rhs.value, Fraction) \
                    and rhs.value != 0:
                factors[-1] = Constant(factors[-1].value / rhs.value)
                continue
            rhs = Power(rhs, MINUS_ONE)
        factors.append(rhs)
    return factors[0] if len(factors) == 1 else Product(tuple(factors))


def _parse_factor(tz) -> Expr:
    tok = tz.peek()
    if tok[0] == "-":
        tz.next()
        return _negate(_parse_factor(tz))
    atom = _parse_atom(tz)
    if tz.peek()[0] == "^":
        tz.next()
        return Power(atom, _parse_factor(tz))
    return atom


def _parse_atom(tz) -> Expr:
    tok = tz.next()
    kind, text, off = tok
    if kind == "num":
        return _parse_number(text, off)
    if kind == "(":
        e = _parse_expr(tz)
        tz.expect(")")
        return e
    if kind == "ident":
        if tz.peek()[0] == "(":
            tz.next()
            arg = _parse_expr(tz)
            tz.expect(")")
            if text == "exp":
                return Exp(arg)
            if text == "log":
                return Log(arg)
            if text == "intt":
                return IntegralT(arg)
            raise ParseError(f"unknown function {text!r}", off, _FUNCTIONS)
        if text in VARIABLES:
            return Variable(text)
        return Parameter(text)
    raise ParseError(f"unexpected token {text!r}", off,
                     ("number", "ident", "(", "-"))


# ---------------------------------------------------------------------------
# printer
# ---------------------------------------------------------------------------

def _fmt_fraction(q: Fraction):
    """Return (numerator_str, denominator_or_None)."""
    if q.denominator == 1:
        return str(q.numerator), None
    return str(q.numerator), str(q.denominator)


def _print_atom(e: Expr) -> str:
    s = format_expr(e)
    if isinstance(e, (Variable, Parameter, Exp, Log, IntegralT)):
        return s
    if isinstance(e, Constant) and isinstance(e.value, Fraction) \
            and e.value.denominator == 1 and e.value >= 0:
        return s
    if isinstance(e, Constant) and isinstance(e.value, float) and e.value >= 0:
        return s
    if isinstance(e, Power):
        return s
    return f"({s})"


def format_expr(e: Expr) -> str:
    """Deterministic infix form; reparsing a printed canonical expression
    and canonicalizing again reproduces the same tree."""
    if isinstance(e, Constant):
        if isinstance(e.value, Fraction):
            num, den = _fmt_fraction(e.value)
            return num if den is None else f"{num}/{den}"
        return repr(e.value)
    if isinstance(e, (Variable, Parameter)):
        return e.name
    if isinstance(e, Exp):
        return f"exp({format_expr(e.arg)})"
    if isinstance(e, Log):
        return f"log({format_expr(e.arg)})"
    if isinstance(e, IntegralT):
        return f"intt({format_expr(e.integrand)})"
    if isinstance(e, Neg):
        return f"-{_print_atom(e.arg)}"
    if isinstance(e, Power):
        b = _print_atom(e.base)
        x = e.exponent
        if isinstance(x, Constant) and isinstance(x.value, Fraction) \
                and x.value.denominator == 1 and x.value >= 0:
            return f"{b}^{x.value.numerator}"
        return f"{b}^({format_expr(x)})"
    if isinstance(e, Product):
        return _format_product(e.factors)
    if isinstance(e, Sum):
        parts = []
        for i, t in enumerate(e.terms):
            c, _m = _split_coeff(t)
            if i == 0:
                parts.append(format_expr(t))
            elif c < 0:
                parts.append(" - " + format_expr(_negate_term(t)))
            else:
                parts.append(" + " + format_expr(t))
        return "".join(parts)
    raise TypeError(f"unknown node {type(e)}")  # pragma: no cover


def _negate_term(t: Expr) -> Expr:
    c, m = _split_coeff(t)
    return _with_coeff(-c, m)


def _format_product(factors) -> str:
    num_parts = []
    den_parts = []
    for f in factors:
        if isinstance(f, Constant) and isinstance(f.value, Fraction):
            num, den = _fmt_fraction(f.value)
            if num != "1":
                num_parts.append(num if not num.startswith("-") else num)
            if den is not None:
                den_parts.append(den)
            continue
        if isinstance(f, Power) and isinstance(f.exponent, Constant) \
                and isinstance(f.exponent.value, Fraction) and f.exponent.value < 0:
            inv = make_power(f.base, Constant(-f.exponent.value))
            den_parts.append(_print_atom(inv))
            continue
        num_parts.append(_print_atom(f))
    if not num_parts:
        num_parts = ["1"]
    num = "*".join(num_parts)
    if num.startswith("-1*"):
        num = "-" + num[3:]
    if not den_parts:
        return num
    if len(den_parts) == 1:
        return f"{num}/{den_parts[0]}"
    return f"{num}/({'*'.join(den_parts)})"


# ---------------------------------------------------------------------------
# symbolic integration in t (table-driven; returns None when no rule applies)
# ---------------------------------------------------------------------------

def integrate_t(e: Expr):
    """Closed-form antiderivative in t for polynomial-exponential shapes,
    plus the substitution patterns c*u'*u^n and c*u'*exp(u).  Returns the
    primitive (no constant) or None."""
    e = simplify(e)
    if isinstance(e, Sum):
        parts = []
        for t in e.terms:
            p = _integrate_term(t)
            if p is None:
                return None
            parts.append(p)
        return simplify(make_sum(parts))
    p = _integrate_term(e)
    return simplify(p) if p is not None else None


def _is_t_free(e: Expr) -> bool:
    return "t" not in free_variables(e)


def _integrate_term(term: Expr):
    if contains_var(term, "x") or contains_var(term, "w") or contains_integral(term):
        return None
    if _is_t_free(term):
        return make_product([term, T])
    coeff, mono = _split_coeff(simplify(term))
    prim = _integrate_monomial(mono)
    if prim is None:
        return None
    return make_product([Constant(coeff), prim])


def _integrate_monomial(m: Expr):
    # t^n
    if m == T:
        return make_product([HALF, make_power(T, TWO)])
    if isinstance(m, Power) and m.base == T and isinstance(m.exponent, Constant):
        n = m.exponent.value
        if n == -1:
            return make_log(T)
        return make_product([Constant(Fraction(1, 1) / (n + 1)) if isinstance(n, Fraction)
                             else Constant(1.0 / (n + 1.0)),
                             make_power(T, simplify(m.exponent + ONE))])
    factors = m.factors if isinstance(m, Product) else (m,)
    # substitution patterns against each Power/Exp/Log factor
    for f in factors:
        rest = make_product([g for g in factors if g is not f])
        if isinstance(f, Power) and not _is_t_free(f.base) and _is_t_free(f.exponent):
            u, n = f.base, f.exponent
            du = differentiate(u, "t")
            if not is_zero(du):
                c2 = _constant_ratio(rest, du)
                if c2 is not None:
                    if isinstance(n, Constant) and n.value == -1:
                        return make_product([c2, make_log(u)])
                    np1 = simplify(n + ONE)
                    return make_product([c2, make_power(np1, MINUS_ONE), make_power(u, np1)])
        if isinstance(f, Exp):
            u = f.arg
            du = differentiate(u, "t")
            if is_zero(du):
                continue
            c2 = _constant_ratio(rest, du)
            if c2 is not None:
                return make_product([c2, f])
            # polynomial * exp(a*t + b): integration by parts, closed form
            if _is_t_free(du):
                prim = _poly_times_exp(rest, u, du)
                if prim is not None:
                    return prim
        if isinstance(f, Log) and is_one(rest) and f.arg == T:
            # int log(t) dt = t log(t) - t
            return make_sum([make_product([T, f]), make_product([MINUS_ONE, T])])
    # polynomial over a power of a linear base: rebase the polynomial on u
    for f in factors:
        if isinstance(f, Power) and _is_integer_constant(f.exponent) and f.exponent.value < 0 \
                and not _is_t_free(f.base):
            prim = _integrate_poly_over_linear(
                make_product([g for g in factors if g is not f]), f.base, int(f.exponent.value))
            if prim is not None:
                return prim
    return None


def _integrate_poly_over_linear(poly: Expr, u: Expr, n: int):
    """Primitive of poly(t) * u^n for u = a + b*t linear in t and n < 0,
    by rewriting the polynomial in powers of u."""
    b = differentiate(u, "t")
    if is_zero(b) or not _is_t_free(b):
        return None
    if not is_zero(differentiate(b, "t")):
        return None
    coeffs = _poly_coeffs(poly)
    if coeffs is None or len(coeffs) > 9:
        return None
    a = simplify(substitute(u, "t", ZERO))
    b_inv = make_power(b, MINUS_ONE)
    by_upow: dict = {}
    for j, cj in enumerate(coeffs):
        if is_zero(cj):
            continue
        for i in range(j + 1):
            d = make_product([cj, Constant(Fraction(math.comb(j, i))),
                              make_power(b_inv, Constant(Fraction(j))),
                              make_power(make_product([MINUS_ONE, a]), Constant(Fraction(j - i)))])
            m = n + i
            by_upow[m] = make_sum([by_upow.get(m, ZERO), d])
    parts = []
    for m, d in by_upow.items():
        if m == -1:
            parts.append(make_product([d, b_inv, make_log(u)]))
        else:
            parts.append(make_product([d, b_inv, Constant(Fraction(1, m + 1)),
                                       make_power(u, Constant(Fraction(m + 1)))]))
    return make_sum(parts)


def _constant_ratio(a: Expr, b: Expr):
    """Return c with a == c*b where c is t-free, else None."""
    if is_zero(b):
        return None
    r = simplify(make_product([a, make_power(b, MINUS_ONE)]))
    if _is_t_free(r):
        return r
    return None


def _poly_times_exp(poly: Expr, u: Expr, a: Expr):
    """Primitive of poly(t) * exp(u) with u' = a (t-free, nonzero)."""
    coeffs = _poly_coeffs(poly)
    if coeffs is None:
        return None
    n = len(coeffs) - 1
    a_inv = make_power(a, MINUS_ONE)
    # int t^k e^{at} = e^{at} sum_{i=0..k} (-1)^i k!/(k-i)! a^{-(i+1)} t^{k-i}
    acc = []
    for k, ck in enumerate(coeffs):
        if is_zero(ck):
            continue
        for i in range(k + 1):
            fac = Fraction(math.factorial(k), math.factorial(k - i)) * (-1) ** i
            acc.append(make_product([ck, Constant(fac),
                                     make_power(a_inv, Constant(Fraction(i + 1))),
                                     make_power(T, Constant(Fraction(k - i)))]))
    del n
    return make_product([make_exp(u), make_sum(acc)])


def _poly_coeffs(e: Expr):
    """Coefficients [c0, c1, ...] of a polynomial in t with t-free
    coefficients; None if e is not of that shape."""
    e = simplify(e)
    terms = e.terms if isinstance(e, Sum) else (e,)
    coeffs: dict = {}
    for t in terms:
        deg = 0
        others = []
        fs = t.factors if isinstance(t, Product) else (t,)
        for f in fs:
            if f == T:
                deg += 1
            elif isinstance(f, Power) and f.base == T and _is_integer_constant(f.exponent) \
                    and f.exponent.value > 0:
                deg += int(f.exponent.value)
            elif _is_t_free(f):
                others.append(f)
            else:
                return None
        coeffs[deg] = make_sum([coeffs.get(deg, ZERO), make_product(others)])
    top = max(coeffs) if coeffs else 0
    return [simplify(coeffs.get(k, ZERO)) for k in range(top + 1)]


def definite_integral_expr(integrand: Expr) -> Expr:
    """int_0^t integrand ds as a closed form when possible, else an
    IntegralT node (evaluated by quadrature)."""
    integrand = simplify(integrand)
    if is_zero(integrand):
        return ZERO
    prim = integrate_t(integrand)
    if prim is not None and not contains_integral(prim):
        at0 = substitute(prim, "t", ZERO)
        return simplify(prim - at0)
    return IntegralT(integrand)


def exp_integral_expr(rate: Expr) -> Expr:
    """exp(int_0^t rate ds): the function with logarithmic derivative
    ``rate`` normalized to 1 at t = 0."""
    return simplify(make_exp(definite_integral_expr(rate)))


# ---------------------------------------------------------------------------
# zero testing
# ---------------------------------------------------------------------------

_EXPAND_CAP = 8


def _foil(s: Expr, n: int) -> Expr:
    """(sum)^n written out as an explicit sum of monomials."""
    base_terms = s.terms if isinstance(s, Sum) else (s,)
    result = s
    for _ in range(n - 1):
        cur = result.terms if isinstance(result, Sum) else (result,)
        result = make_sum([make_product([a, b]) for a in cur for b in base_terms])
    return result


def _expand_powers(e: Expr) -> Expr:
    """Expand small positive integer powers of sums (zero-testing aid)."""
    if isinstance(e, (Constant, Variable, Parameter)):
        return e
    if isinstance(e, Power) and isinstance(e.base, Sum) and _is_integer_constant(e.exponent):
        n = int(e.exponent.value)
        if 2 <= n <= _EXPAND_CAP:
            return _foil(_expand_powers(e.base), n)
    if isinstance(e, Sum):
        return make_sum([_expand_powers(t) for t in e.terms])
    if isinstance(e, Product):
        return make_product([_expand_powers(f) for f in e.factors])
    if isinstance(e, Power):
        return make_power(_expand_powers(e.base), _expand_powers(e.exponent))
    if isinstance(e, Exp):
        return make_exp(_expand_powers(e.arg))
    if isinstance(e, Log):
        return make_log(_expand_powers(e.arg))
    if isinstance(e, IntegralT):
        return IntegralT(_expand_powers(e.integrand))
    if isinstance(e, Neg):
        return make_product([MINUS_ONE, _expand_powers(e.arg)])
    return e  # pragma: no cover


def _denominator_clearer(e: Expr):
    """Product of composite bases raised so that multiplying e by it removes
    every negative-constant-exponent factor; None when there are none.

    Multiplying by such factors is zeroness-preserving wherever the
    denominators are nonzero, which is all of the evaluation domain.
    """
    need: dict = {}
    terms = e.terms if isinstance(e, Sum) else (e,)
    for t in terms:
        factors = t.factors if isinstance(t, Product) else (t,)
        for f in factors:
            if isinstance(f, Power) and isinstance(f.exponent, Constant) \
                    and f.exponent.value < 0 and not isinstance(f.base, (Constant,)):
                v = -f.exponent.value
                cur = need.get(f.base)
                if cur is None or v > cur:
                    need[f.base] = v
    if not need:
        return None
    return make_product([make_power(b, Constant(v)) for b, v in need.items()])


def symbolic_zero_state(e: Expr) -> str:
    """'zero' | 'nonzero' | 'undecided' for the canonical form of e.

    Canonical-form-is-literally-zero decides 'zero'; a nonzero constant
    decides 'nonzero'.  Before giving up, denominators are cleared and
    small sum-powers expanded, which settles rational identities.
    """
    s = simplify(e)
    for _ in range(3):
        if is_zero(s):
            return "zero"
        if isinstance(s, Constant):
            return "nonzero"
        m = _denominator_clearer(s)
        expanded = simplify(_expand_powers(s if m is None else make_product([s, m])))
        if expanded == s:
            break
        s = expanded
    if is_zero(s):
        return "zero"
    if isinstance(s, Constant):
        return "nonzero"
    return "undecided"


def equivalent_zero(e: Expr) -> bool:
    return symbolic_zero_state(e) == "zero"
