"""Mineral formula parsing into element counts and atom fractions.

Handles decimal subscripts, nested ``()``/``[]``/``{}`` groups with
multipliers, hydration parts joined by ``·`` (with optional leading
coefficients such as ``·2H2O``), site-sharing lists like ``(Mg,Fe)2`` whose
multiplier is split evenly between the listed elements, and oxidation or
charge annotations (``Fe2+``, ``Fe+++``, ``Fe³⁺``, ``O^{2-}``), which are
dropped.
"""

from __future__ import annotations

import re
from collections import defaultdict
from fractions import Fraction

from ..errors import FormulaError
from .composition import ElementComposition, is_element

_SUBSCRIPTS = str.maketrans("₀₁₂₃₄₅₆₇₈₉", "0123456789")
_SUPERSCRIPT_CHARGE = re.compile(r"[⁰¹²³⁴⁵⁶⁷⁸⁹]*[⁺⁻]+")
_CARET_CHARGE = re.compile(r"\^\{?[0-9]*[+\-]*\}?")
# element symbol followed by an oxidation/charge marker: Fe2+, Fe3+, Fe++, S2-
_OXIDATION = re.compile(r"([A-Z][a-z]?)(\d*[+\-]+)")
_NUMBER = re.compile(r"\d+(?:\.\d+)?|\.\d+")
_HYDRATE_SEPARATORS = "·•∙⋅*"
_OPEN = {"(": ")", "[": "]", "{": "}"}


def _normalize(text: str) -> str:
    s = text.translate(_SUBSCRIPTS)
    s = _SUPERSCRIPT_CHARGE.sub("", s)
    s = _CARET_CHARGE.sub("", s)
    s = _OXIDATION.sub(r"\1", s)
    for sep in _HYDRATE_SEPARATORS:
        s = s.replace(sep, "·")
    s = s.replace("□", "")  # structural vacancy
    return "".join(s.split())


class _Parser:
    def __init__(self, text: str):
        self.s = text
        self.i = 0

    def peek(self) -> str:
        return self.s[self.i] if self.i < len(self.s) else ""

    def number(self, default: Fraction | None = Fraction(1)) -> Fraction | None:
        m = _NUMBER.match(self.s, self.i)
        if not m:
            return default
        self.i = m.end()
        return Fraction(m.group())

    def symbol(self) -> str:
        c = self.peek()
        if not c.isupper():
            raise FormulaError(f"expected an element symbol at position {self.i} in {self.s!r}")
        two = self.s[self.i: self.i + 2]
        if len(two) == 2 and two[1].islower() and is_element(two):
            self.i += 2
            return two
        if is_element(c):
            self.i += 1
            return c
        bad = two if len(two) == 2 and two[1].islower() else c
        raise FormulaError(f"unknown element symbol {bad!r} in {self.s!r}")

    def sequence(self, closer: str = "") -> dict[str, Fraction]:
        """Parse until ``closer`` (or end); commas separate site-sharing alternatives."""
        alternatives = [defaultdict(Fraction)]
        while True:
            c = self.peek()
            if c == "":
                if closer:
                    raise FormulaError(f"unbalanced parentheses in {self.s!r}")
                break
            if c == closer:
                break
            if c in ")]}":
                raise FormulaError(f"unbalanced parentheses in {self.s!r}")
            if c == ",":
                if not closer:
                    raise FormulaError(f"comma outside a group in {self.s!r}")
                self.i += 1
                alternatives.append(defaultdict(Fraction))
                continue
            current = alternatives[-1]
            if c in _OPEN:
                self.i += 1
                inner = self.sequence(_OPEN[c])
                self.i += 1
                mult = self.number()
                for k, v in inner.items():
                    current[k] += v * mult
            else:
                sym = self.symbol()
                current[sym] += self.number()
        if len(alternatives) == 1:
            return dict(alternatives[0])
        if any(not alt for alt in alternatives):
            raise FormulaError(f"empty alternative in {self.s!r}")
        share = Fraction(1, len(alternatives))
        merged: dict[str, Fraction] = defaultdict(Fraction)
        for alt in alternatives:
            for k, v in alt.items():
                merged[k] += v * share
        return dict(merged)


def parse_formula_counts(text: str) -> dict[str, Fraction]:
    """Exact element counts for a formula."""
    if not text or not text.strip():
        raise FormulaError("empty formula")
    s = _normalize(text)
    totals: dict[str, Fraction] = defaultdict(Fraction)
    for part in s.split("·"):
        if not part:
            raise FormulaError(f"empty hydration part in {text!r}")
        p = _Parser(part)
        coeff = p.number()
        counts = p.sequence()
        if p.i != len(part):
            raise FormulaError(f"trailing characters in {text!r}")
        if not counts:
            raise FormulaError(f"no elements in {part!r}")
        for k, v in counts.items():
            totals[k] += v * coeff
    return dict(totals)


def parse_formula(text: str) -> tuple[ElementComposition, dict[str, float]]:
    """Return ``(atom fractions, element counts)`` for a mineral formula."""
    counts = parse_formula_counts(text)
    total = sum(counts.values())
    if total <= 0:
        raise FormulaError(f"formula {text!r} has no atoms")
    fractions = {k: float(v / total) for k, v in counts.items() if v > 0}
    return ElementComposition(fractions), {k: float(v) for k, v in counts.items()}
