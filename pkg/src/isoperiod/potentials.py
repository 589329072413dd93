"""Polynomial potentials and the tiny expression language the CLI accepts.

Expressions are polynomials in a single variable built from decimal
literals, ``+``, ``-``, ``*`` and ``^`` (integer powers).  Juxtaposition of
a literal and the variable is allowed, so ``2y^2`` means ``2*y^2``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class PotentialSyntaxError(ValueError):
    """The expression is not a valid polynomial in one variable."""


@dataclass(frozen=True)
class Polynomial1D:
    """Real polynomial ``V(x) = sum_k coeffs[k] x^k`` (coeffs ascending)."""

    coeffs: tuple[float, ...]
    var: str = "x"

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            coeffs = (0.0,)
        # normalize away trailing zero coefficients (keep at least the constant)
        deg = len(coeffs) - 1
        while deg > 0 and coeffs[deg] == 0.0:
            deg -= 1
        object.__setattr__(self, "coeffs", coeffs[: deg + 1])
        if not all(np.isfinite(self.coeffs)):
            raise ValueError("polynomial coefficients must be finite")

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        """Evaluate at a scalar or ndarray (Horner)."""
        if isinstance(x, np.ndarray):
            acc = np.full_like(x, self.coeffs[-1], dtype=float)
            for c in reversed(self.coeffs[:-1]):
                acc = acc * x + c
            return acc
        acc = self.coeffs[-1]
        for c in reversed(self.coeffs[:-1]):
            acc = acc * x + c
        return acc

    def derivative(self) -> "Polynomial1D":
        if self.degree == 0:
            return Polynomial1D((0.0,), self.var)
        dcoeffs = tuple(k * c for k, c in enumerate(self.coeffs) if k > 0)
        return Polynomial1D(dcoeffs, self.var)

    def bounded_below(self) -> bool:
        """True when V is bounded below on the whole real line."""
        if self.degree == 0:
            return True
        return self.degree % 2 == 0 and self.coeffs[-1] > 0

    def real_roots(self, value: float = 0.0) -> np.ndarray:
        """Sorted real solutions of V(x) = value."""
        shifted = np.array(self.coeffs, dtype=float)
        shifted[0] -= value
        if len(shifted) == 1:
            return np.array([])
        roots = np.polynomial.polynomial.polyroots(shifted)
        scale = 1.0 + np.max(np.abs(roots)) if len(roots) else 1.0
        real = roots[np.abs(roots.imag) < 1e-9 * scale].real
        return np.sort(real)

    def to_expression(self) -> str:
        """Round-trippable expression string, highest power first."""
        parts = []
        for k in range(self.degree, -1, -1):
            c = self.coeffs[k]
            if c == 0.0 and self.degree > 0:
                continue
            term = f"{abs(c):.17g}"
            if k == 1:
                term += f"*{self.var}"
            elif k > 1:
                term += f"*{self.var}^{k}"
            parts.append(("-" if c < 0 else "+", term))
        if not parts:
            return "0"
        sign, first = parts[0]
        text = ("-" if sign == "-" else "") + first
        for sign, term in parts[1:]:
            text += f" {sign} {term}"
        return text


_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*|\.\d+|\d+)|(?P<var>[a-zA-Z])|(?P<op>[-+*^]))"
)


def _tokenize(text: str):
    pos, tokens = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PotentialSyntaxError(f"unexpected character {text[pos]!r} in {text!r}")
        if m.group("number") is not None:
            tokens.append(("num", float(m.group("number"))))
        elif m.group("var") is not None:
            tokens.append(("var", m.group("var")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    return tokens


def parse_potential(text: str) -> Polynomial1D:
    """Parse the polynomial mini-language into a :class:`Polynomial1D`.

    Accepted forms: ``x^2``, ``0.5*x^2``, ``2y^2``, ``x^4 - 0.1*x^2 + 3``.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise PotentialSyntaxError("empty potential expression")
    powers: dict[int, float] = {}
    var: str | None = None
    i = 0

    def parse_factor(i):
        nonlocal var
        coeff, power = 1.0, 0
        if i < len(tokens) and tokens[i][0] == "num":
            coeff = tokens[i][1]
            i += 1
        if i < len(tokens) and tokens[i][0] == "var":
            name = tokens[i][1]
            if var is None:
                var = name
            elif name != var:
                raise PotentialSyntaxError(
                    f"only one variable allowed, saw {var!r} and {name!r}"
                )
            i += 1
            power = 1
            if i + 1 < len(tokens) and tokens[i] == ("op", "^"):
                kind, val = tokens[i + 1]
                if kind != "num" or val != int(val) or val < 0:
                    raise PotentialSyntaxError("exponent must be a nonnegative integer")
                power = int(val)
                i += 2
        elif coeff == 1.0 and (i >= len(tokens) or tokens[i][0] != "num"):
            raise PotentialSyntaxError(f"expected a number or variable in {text!r}")
        return coeff, power, i

    def parse_term(i):
        coeff, power, i = parse_factor(i)
        while i < len(tokens) and tokens[i] == ("op", "*"):
            c2, p2, i = parse_factor(i + 1)
            coeff *= c2
            power += p2
        return coeff, power, i

    sign = 1.0
    if tokens[i] == ("op", "+"):
        i += 1
    elif tokens[i] == ("op", "-"):
        sign, i = -1.0, i + 1
    while True:
        coeff, power, i = parse_term(i)
        powers[power] = powers.get(power, 0.0) + sign * coeff
        if i == len(tokens):
            break
        kind, op = tokens[i]
        if kind != "op" or op not in "+-":
            raise PotentialSyntaxError(f"expected '+' or '-' at token {i} of {text!r}")
        sign = 1.0 if op == "+" else -1.0
        i += 1

    deg = max(powers)
    coeffs = tuple(powers.get(k, 0.0) for k in range(deg + 1))
    return Polynomial1D(coeffs, var or "x")


def parse_separable(text: str) -> tuple[Polynomial1D, Polynomial1D]:
    """Parse ``"x^2:2y^2"`` into the two 1D factors of a separable potential."""
    left, sep, right = text.partition(":")
    if not sep or not left.strip() or not right.strip():
        raise PotentialSyntaxError(
            f"separable potential must look like 'x^2:2y^2', got {text!r}"
        )
    return parse_potential(left), parse_potential(right)
