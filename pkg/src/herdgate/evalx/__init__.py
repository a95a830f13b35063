"""Evaluation: ROC analysis, operating points, confusion matrices, yearly
trends, permutation importance and veterinary-practice analysis."""
from .importance import FeatureImportance, ImportanceReport, mean_ci, permutation_importance
from .practice import PracticeReport, PracticeRow, practice_analysis, practice_analysis_arrays
from .roc import (
    ConfusionMatrix,
    OperatingPoint,
    RocAnalysis,
    accuracy,
    auc_score,
    confusion,
    roc,
    threshold_for_sensitivity,
    threshold_for_specificity,
)
from .trends import YearRate, misclassification_by_year, yearly_misclassification

__all__ = [
    "ConfusionMatrix",
    "FeatureImportance",
    "ImportanceReport",
    "OperatingPoint",
    "PracticeReport",
    "PracticeRow",
    "RocAnalysis",
    "YearRate",
    "accuracy",
    "auc_score",
    "confusion",
    "mean_ci",
    "misclassification_by_year",
    "permutation_importance",
    "practice_analysis",
    "practice_analysis_arrays",
    "roc",
    "threshold_for_sensitivity",
    "threshold_for_specificity",
    "yearly_misclassification",
]
