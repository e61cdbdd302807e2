"""Emission line tables and mineral formula tables (CSV)."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError
from .composition import ATOMIC_NUMBER, ElementComposition, is_element
from .formula import parse_formula


@dataclass(frozen=True)
class LineTable:
    """Emission lines: one row per (element, ionization stage, wavelength, intensity)."""

    element: tuple
    stage: np.ndarray
    wavelength_nm: np.ndarray
    rel_intensity: np.ndarray

    def __post_init__(self) -> None:
        el = tuple(self.element)
        stage = np.asarray(self.stage, dtype=int)
        wl = np.asarray(self.wavelength_nm, dtype=float)
        inten = np.asarray(self.rel_intensity, dtype=float)
        if not (len(el) == stage.size == wl.size == inten.size):
            raise ValidationError("line table columns differ in length")
        for sym in el:
            if not is_element(sym):
                raise ValidationError(f"unknown element symbol {sym!r} in line table")
        if np.any(wl <= 0) or np.any(inten < 0) or not np.all(np.isfinite(wl)):
            raise ValidationError("wavelengths must be positive and intensities >= 0")
        for name, arr in (("stage", stage), ("wavelength_nm", wl), ("rel_intensity", inten)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "element", el)

    def __len__(self) -> int:
        return len(self.element)

    @property
    def elements(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.element), key=ATOMIC_NUMBER.__getitem__))

    def lines_for(self, symbol: str) -> tuple[np.ndarray, np.ndarray]:
        mask = np.array([e == symbol for e in self.element], dtype=bool)
        return self.wavelength_nm[mask], self.rel_intensity[mask]

    def restrict(self, elements) -> "LineTable":
        keep = set(elements)
        mask = np.array([e in keep for e in self.element], dtype=bool)
        return LineTable(tuple(e for e, m in zip(self.element, mask) if m),
                         self.stage[mask], self.wavelength_nm[mask], self.rel_intensity[mask])


def parse_line_table(text: str) -> LineTable:
    """CSV with header ``element,stage,wavelength_nm,rel_intensity``."""
    reader = csv.DictReader(io.StringIO(text))
    required = {"element", "stage", "wavelength_nm", "rel_intensity"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise ParseError(f"line table needs columns {sorted(required)}")
    el, st, wl, it = [], [], [], []
    for n, row in enumerate(reader, start=2):
        try:
            el.append(row["element"].strip())
            st.append(int(row["stage"]))
            wl.append(float(row["wavelength_nm"]))
            it.append(float(row["rel_intensity"]))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line table row {n}: {exc}") from None
    if not el:
        raise ParseError("line table is empty")
    return LineTable(tuple(el), np.array(st), np.array(wl), np.array(it))


def read_line_table(path: str | os.PathLike) -> LineTable:
    return parse_line_table(Path(path).read_text())


def default_line_table() -> LineTable:
    """Small bundled table of strong lines for twelve rock-forming elements."""
    text = resources.files("spectramin.data").joinpath("libs_lines_fixture.csv").read_text()
    return parse_line_table(text)


def parse_mineral_table(text: str) -> dict[str, ElementComposition]:
    """CSV ``name,formula`` -> atom-fraction compositions (file order kept)."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"name", "formula"} <= set(reader.fieldnames):
        raise ParseError("mineral table needs columns name, formula")
    out = {}
    for row in reader:
        out[row["name"].strip()] = parse_formula(row["formula"])[0]
    if not out:
        raise ParseError("mineral table is empty")
    return out


def read_mineral_table(path: str | os.PathLike) -> dict[str, ElementComposition]:
    return parse_mineral_table(Path(path).read_text())


def default_mineral_table() -> dict[str, ElementComposition]:
    text = resources.files("spectramin.data").joinpath("minerals_fixture.csv").read_text()
    return parse_mineral_table(text)
