from __future__ import annotations

import warnings
from typing import Mapping

import numpy as np

from ..errors import MissingLines
from ..spectra import LIBS_GRID, GridSpec, Spectrum, SpectrumKind, normalize_unit
from .composition import ElementComposition
from .lines import LineTable

DEFAULT_SIGMA_NM = 0.2


def libs_intensity(comp: ElementComposition | Mapping[str, float], lines: LineTable,
                   grid: GridSpec = LIBS_GRID, sigma_nm: float = DEFAULT_SIGMA_NM,
                   on_missing: str = "error") -> np.ndarray:
    """Un-normalized theoretical spectrum: Gaussian lines weighted by fraction.

    ``on_missing`` is ``"error"`` or ``"warn"`` (skip elements without lines).
    """
    fractions = comp.fractions if isinstance(comp, ElementComposition) else comp
    x = grid.positions()
    y = np.zeros_like(x)
    for sym, frac in fractions.items():
        if frac == 0:
            continue
        wl, inten = lines.lines_for(sym)
        if wl.size == 0:
            msg = f"no emission lines for element {sym!r}"
            if on_missing == "warn":
                warnings.warn(msg, stacklevel=2)
                continue
            raise MissingLines(msg)
        profile = np.exp(-0.5 * ((x[:, None] - wl[None, :]) / sigma_nm) ** 2) @ inten
        y += frac * profile
    return y


def synth_libs_spectrum(comp: ElementComposition | Mapping[str, float], lines: LineTable,
                        grid: GridSpec = LIBS_GRID, sigma_nm: float = DEFAULT_SIGMA_NM,
                        on_missing: str = "error") -> Spectrum:
    y = libs_intensity(comp, lines, grid, sigma_nm, on_missing)
    return Spectrum(grid, normalize_unit(y), SpectrumKind.LIBS,
                    {"composition": ",".join(f"{k}:{v:.6g}" for k, v in dict(
                        comp.fractions if isinstance(comp, ElementComposition) else comp).items())})
