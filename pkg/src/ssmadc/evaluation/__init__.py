"""AUC metrics, evaluation runs and the scaling benchmark."""
from .metrics import ScoredExample, auc_of, macro_ovr_auc, recording_auc, roc_auc

__all__ = ["ScoredExample", "auc_of", "macro_ovr_auc", "recording_auc", "roc_auc"]
