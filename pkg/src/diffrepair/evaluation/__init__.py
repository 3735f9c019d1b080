"""Metrics, trend/band/overlap analytics and the downstream repair consumer."""
from .metrics import (
    MetricReport, alignment, edit_distance, edit_positions, execution_match, score, sketch_match,
    token_edit_distance, values_equal,
)

__all__ = [
    "MetricReport", "alignment", "edit_distance", "edit_positions", "execution_match", "score",
    "sketch_match", "token_edit_distance", "values_equal",
]
