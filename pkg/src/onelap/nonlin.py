"""Pointwise nonlinearities ``s -> l(x, s)`` acting on interior-cell vectors.

Each term knows its value, its derivative in ``s`` and its primitive
``L(x, s) = int_0^s l(x, t) dt``.  Coefficients may be scalars or arrays
aligned with ``Grid.interior_idx``.  Terms add with ``+``.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad_vec

PRIMITIVE_TOL = 1e-10


class Term:
    def value(self, s):
        raise NotImplementedError

    def derivative(self, s):
        raise NotImplementedError

    def primitive(self, s):
        raise NotImplementedError

    def curvature(self, s):
        """Positive surrogate for the derivative used in Newton metrics."""
        return self.derivative(s)

    def __call__(self, s):
        return self.value(s)

    def __add__(self, other):
        return Sum([self, other])

    def __neg__(self):
        return Scaled(self, -1.0)

    def __sub__(self, other):
        return Sum([self, -other])

    def scaled(self, factor):
        return Scaled(self, factor)


class Sum(Term):
    def __init__(self, terms):
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, Sum) else [t])
        self.terms = flat

    def value(self, s):
        return sum(t.value(s) for t in self.terms)

    def derivative(self, s):
        return sum(t.derivative(s) for t in self.terms)

    def primitive(self, s):
        return sum(t.primitive(s) for t in self.terms)

    def curvature(self, s):
        return sum(t.curvature(s) for t in self.terms)

    def __repr__(self):
        return " + ".join(repr(t) for t in self.terms)


class Scaled(Term):
    def __init__(self, term, factor):
        self.term, self.factor = term, factor

    def value(self, s):
        return self.factor * self.term.value(s)

    def derivative(self, s):
        return self.factor * self.term.derivative(s)

    def primitive(self, s):
        return self.factor * self.term.primitive(s)

    def curvature(self, s):
        return self.factor * self.term.curvature(s)

    def __repr__(self):
        return f"{self.factor!r}*({self.term!r})"


class Zero(Term):
    def value(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    derivative = primitive = value

    def __repr__(self):
        return "0"


class Constant(Term):
    """``l(x, s) = c(x)``."""

    def __init__(self, c):
        self.c = c

    def value(self, s):
        return self.c + np.zeros_like(np.asarray(s, dtype=float))

    def derivative(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def primitive(self, s):
        return self.c * np.asarray(s, dtype=float)

    def __repr__(self):
        return f"Constant({_short(self.c)})"


class Linear(Term):
    """``l(x, s) = a(x) s``."""

    def __init__(self, coef=1.0):
        self.coef = coef

    def value(self, s):
        return self.coef * np.asarray(s, dtype=float)

    def derivative(self, s):
        return self.coef + np.zeros_like(np.asarray(s, dtype=float))

    def primitive(self, s):
        s = np.asarray(s, dtype=float)
        return 0.5 * self.coef * s * s

    def __repr__(self):
        return f"Linear({_short(self.coef)})"


class Power(Term):
    """Odd power ``a(x) |s|^(q-1) s`` with ``q >= 1``."""

    def __init__(self, coef, q):
        if q < 1:
            raise ValueError("power exponent must be >= 1")
        self.coef, self.q = coef, float(q)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return self.coef * np.abs(s) ** (self.q - 1) * s

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        return self.coef * self.q * np.abs(s) ** (self.q - 1)

    def primitive(self, s):
        s = np.asarray(s, dtype=float)
        return self.coef * np.abs(s) ** (self.q + 1) / (self.q + 1)

    def __repr__(self):
        return f"Power({_short(self.coef)}, {self.q:g})"


class Singular(Term):
    """``a(x) (s + eps)^(-gamma)``, defined for ``s > -eps``.

    Outside the domain the value is NaN and the primitive is ``+inf``, so
    descent methods treat ``s = -eps`` as a barrier.
    """

    def __init__(self, coef, eps, gamma):
        if not eps > 0 or not gamma > 0:
            raise ValueError("need eps > 0 and gamma > 0")
        self.coef, self.eps, self.gamma = coef, float(eps), float(gamma)

    def _base(self, s):
        t = np.asarray(s, dtype=float) + self.eps
        return np.where(t > 0, t, np.nan)

    def value(self, s):
        return self.coef * self._base(s) ** (-self.gamma)

    def derivative(self, s):
        return -self.gamma * self.coef * self._base(s) ** (-self.gamma - 1)

    def primitive(self, s):
        t = self._base(s)
        e, g = self.eps, self.gamma
        if g == 1.0:
            core = np.log(t / e)
        else:
            core = (t ** (1 - g) - e ** (1 - g)) / (1 - g)
        out = self.coef * core
        outside = np.isnan(t)
        if np.any(outside):
            out = np.where(outside, np.inf, out)
        return out

    def __repr__(self):
        return f"Singular({_short(self.coef)}, eps={self.eps:g}, gamma={self.gamma:g})"


class SingularGap(Term):
    """``a(x) (eps^(-gamma) - (s + eps)^(-gamma))``: increasing, zero at ``s = 0``.

    Moving a decreasing singular source ``a (s + eps)^(-gamma)`` to the left-hand
    side as this term keeps the absorption increasing.  The primitive is
    ``+inf`` for ``s <= -eps`` even when ``gamma < 1``.
    """

    def __init__(self, coef, eps, gamma):
        self.source = Singular(1.0, eps, gamma)
        self.coef, self.eps, self.gamma = coef, float(eps), float(gamma)

    def value(self, s):
        return self.coef * (self.eps ** (-self.gamma) - self.source.value(s))

    def derivative(self, s):
        return -self.coef * self.source.derivative(s)

    def primitive(self, s):
        s = np.asarray(s, dtype=float)
        inner = self.source.primitive(s)
        out = self.coef * (self.eps ** (-self.gamma) * s - np.where(np.isinf(inner), 0.0, inner))
        return np.where(np.isinf(inner), np.inf, out)

    def __repr__(self):
        return f"SingularGap({_short(self.coef)}, eps={self.eps:g}, gamma={self.gamma:g})"


class ShiftedPower(Term):
    """Fidelity pull ``|s - a|^(q-2) (s - a)`` towards a target ``a(x)``.

    The primitive is normalized to vanish at ``s = 0``:
    ``(|s - a|^q - |a|^q) / q``.
    """

    def __init__(self, target, q):
        if q <= 1:
            raise ValueError("fidelity exponent must exceed 1")
        self.target, self.q = target, float(q)

    def value(self, s):
        d = np.asarray(s, dtype=float) - self.target
        return np.abs(d) ** (self.q - 1) * np.sign(d)

    def derivative(self, s):
        d = np.abs(np.asarray(s, dtype=float) - self.target)
        with np.errstate(divide="ignore"):
            return (self.q - 1) * d ** (self.q - 2)

    def curvature(self, s):
        # for q < 2 the exact Newton step on |d|^q maps d to (2-q)/(1-q) d and
        # oscillates; the majorizing curvature |d|^(q-2) never overshoots
        d = np.abs(np.asarray(s, dtype=float) - self.target)
        if self.q < 2:
            return np.maximum(d, 1e-10) ** (self.q - 2)
        return (self.q - 1) * d ** (self.q - 2)

    def primitive(self, s):
        d = np.asarray(s, dtype=float) - self.target
        return (np.abs(d) ** self.q - np.abs(self.target) ** self.q) / self.q

    def __repr__(self):
        return f"ShiftedPower(q={self.q:g})"


class Generic(Term):
    """Arbitrary vectorized ``func(s)``.

    The derivative uses central differences and the primitive uses adaptive
    vector quadrature of ``s * int_0^1 func(tau s) dtau`` to absolute
    tolerance ``1e-10``.
    """

    def __init__(self, func, name="generic"):
        self.func, self.name = func, name

    def value(self, s):
        return np.asarray(self.func(np.asarray(s, dtype=float)), dtype=float)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        step = 1e-6 * np.maximum(1.0, np.abs(s))
        return (self.value(s + step) - self.value(s - step)) / (2 * step)

    def primitive(self, s):
        s = np.asarray(s, dtype=float)
        integral, _ = quad_vec(lambda tau: self.value(tau * s), 0.0, 1.0, epsabs=PRIMITIVE_TOL, epsrel=0)
        return s * integral

    def __repr__(self):
        return f"Generic({self.name})"


def as_term(obj):
    """Accept a Term, a plain callable, or None (meaning zero)."""
    if obj is None:
        return Zero()
    if isinstance(obj, Term):
        return obj
    if callable(obj):
        return Generic(obj)
    raise TypeError(f"cannot interpret {obj!r} as a nonlinearity")


def _short(c):
    if np.ndim(c) == 0:
        return f"{float(c):g}"
    return f"array[{np.size(c)}]"
