"""The canonical nine-label disease set.

Every score vector, confusion matrix and checkpoint in this package is
indexed by the alphabetical order fixed here. Changing the order would
silently invalidate persisted checkpoints, so it is part of the public
contract.
"""

from __future__ import annotations

from enum import Enum


class DiseaseLabel(str, Enum):
    ACNE = "Acne"
    ALOPECIA = "Alopecia"
    CRUST = "Crust"
    ERYTHEMA = "Erythema"
    LEUKODERMA = "Leukoderma"
    PIGMENTED_MACULAE = "PigmentedMaculae"
    PUSTULE = "Pustule"
    ULCER = "Ulcer"
    WHEAL = "Wheal"

    def __str__(self) -> str:  # "Acne", not "DiseaseLabel.ACNE"
        return self.value


# Alphabetical; index positions are load-bearing.
CANONICAL_LABELS: tuple[DiseaseLabel, ...] = tuple(DiseaseLabel)
LABEL_TO_INDEX: dict[DiseaseLabel, int] = {lab: i for i, lab in enumerate(CANONICAL_LABELS)}
NUM_CLASSES: int = len(CANONICAL_LABELS)


class UnknownLabelError(ValueError):
    """A label string outside the nine-member set."""


def parse_label(value: str) -> DiseaseLabel:
    """Parse a label string, accepting the canonical spelling case-insensitively."""
    for lab in CANONICAL_LABELS:
        if value.lower() == lab.value.lower():
            return lab
    raise UnknownLabelError(
        f"unknown disease label {value!r}; expected one of "
        + ", ".join(lab.value for lab in CANONICAL_LABELS)
    )


def label_index(label: DiseaseLabel) -> int:
    return LABEL_TO_INDEX[label]
