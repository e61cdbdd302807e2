"""LIBS element-composition estimation and composition-based mineral matching."""

from .composition import ElementComposition, composition_cosine, composition_mae
from .estimate import element_weight_vectors, estimate_composition_cosine, match_mineral_by_composition
from .formula import parse_formula
from .lines import (
    LineTable,
    default_line_table,
    default_mineral_table,
    read_line_table,
    read_mineral_table,
)
from .peaks import PeakList, detect_peaks
from .regressor import LibsCnnModel, predict_libs_cnn, train_libs_cnn
from .synth import libs_intensity, synth_libs_spectrum

__all__ = [
    "ElementComposition", "LibsCnnModel", "LineTable", "PeakList", "composition_cosine",
    "composition_mae", "default_line_table", "default_mineral_table", "detect_peaks",
    "element_weight_vectors", "estimate_composition_cosine", "libs_intensity",
    "match_mineral_by_composition", "parse_formula", "predict_libs_cnn", "read_line_table",
    "read_mineral_table", "synth_libs_spectrum", "train_libs_cnn",
]
