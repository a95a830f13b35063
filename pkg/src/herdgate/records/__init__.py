"""Test-event data model, dataset I/O, gold-standard labelling and synthesis."""
from .features import CONTROL, categorical_mask, feature_matrix, feature_names, label_array
from .io import format_dataset, load_breakdowns, load_dataset, parse_dataset, save_breakdowns, save_dataset
from .labels import label_confirmed_breakdowns
from .schema import BreakdownEvent, RecordError, TestRecord
from .synth import GroundTruth, SynthConfig, generate_synthetic

__all__ = [
    "BreakdownEvent",
    "CONTROL",
    "GroundTruth",
    "RecordError",
    "SynthConfig",
    "TestRecord",
    "categorical_mask",
    "feature_matrix",
    "feature_names",
    "format_dataset",
    "generate_synthetic",
    "label_confirmed_breakdowns",
    "label_array",
    "load_breakdowns",
    "load_dataset",
    "parse_dataset",
    "save_breakdowns",
    "save_dataset",
]
