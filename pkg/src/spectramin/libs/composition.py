from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..errors import ValidationError, ZeroVector

SUM_TOL = 1e-9

# 118 IUPAC symbols, ordered by atomic number
ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(ELEMENTS, start=1)}


def is_element(symbol: str) -> bool:
    return symbol in ATOMIC_NUMBER


@dataclass(frozen=True)
class ElementComposition:
    """Atom fractions per element; nonnegative and summing to one."""

    fractions: Mapping[str, float]

    def __post_init__(self) -> None:
        fr = {str(k): float(v) for k, v in self.fractions.items()}
        for sym, v in fr.items():
            if not is_element(sym):
                raise ValidationError(f"unknown element symbol {sym!r}")
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"fraction for {sym} must be finite and >= 0")
        if abs(sum(fr.values()) - 1.0) > SUM_TOL:
            raise ValidationError(f"fractions sum to {sum(fr.values())!r}, expected 1")
        ordered = dict(sorted(fr.items(), key=lambda kv: ATOMIC_NUMBER[kv[0]]))
        object.__setattr__(self, "fractions", ordered)

    @classmethod
    def from_amounts(cls, amounts: Mapping[str, float]) -> "ElementComposition":
        amounts = {k: float(v) for k, v in amounts.items() if v > 0}
        total = sum(amounts.values())
        if total <= 0:
            raise ZeroVector("composition has no positive amounts")
        return cls({k: v / total for k, v in amounts.items()})

    @property
    def elements(self) -> tuple[str, ...]:
        return tuple(self.fractions)

    def get(self, symbol: str) -> float:
        return self.fractions.get(symbol, 0.0)

    def vector(self, elements: Iterable[str]) -> np.ndarray:
        return np.array([self.get(e) for e in elements])

    def to_dict(self) -> dict[str, float]:
        return dict(self.fractions)


def union_elements(*comps: ElementComposition | Mapping[str, float]) -> list[str]:
    syms = set()
    for c in comps:
        syms.update(c.fractions if isinstance(c, ElementComposition) else c)
    return sorted(syms, key=lambda s: ATOMIC_NUMBER.get(s, 999))


def composition_cosine(a: ElementComposition, b: ElementComposition) -> float:
    """Cosine similarity of two compositions over the union of their elements."""
    elements = union_elements(a, b)
    va, vb = a.vector(elements), b.vector(elements)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ZeroVector("composition vector is zero")
    return float(va @ vb / (na * nb))


def composition_mae(pred: ElementComposition, truth: ElementComposition) -> float:
    """Mean |pred_e - truth_e| over the union of elements present in either."""
    elements = union_elements(pred, truth)
    return float(np.mean(np.abs(pred.vector(elements) - truth.vector(elements))))
