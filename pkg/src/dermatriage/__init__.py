"""Nine-class dermatological disease classification platform.

Subsystems:
  corpus    - manifest ingestion, class balancing, stratified splits, k-folds
  modelzoo  - pretrained backbones with a replaceable 9-way head, checkpoints
  trainer   - SGD fine-tuning with early stopping and cross-validation
  evaluator - confusion matrix, top-1 accuracy, latency, run comparison
  service   - triage loop: submission, clinician vetting, corpus feedback
  cli       - pipeline entry point
"""

__version__ = "0.1.0"

from dermatriage.labels import CANONICAL_LABELS, NUM_CLASSES, DiseaseLabel

__all__ = ["CANONICAL_LABELS", "NUM_CLASSES", "DiseaseLabel", "__version__"]
