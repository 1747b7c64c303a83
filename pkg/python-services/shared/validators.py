"""
Validation utilities for loaded knowledge graphs.
"""

from typing import List

import numpy as np

from .models import ValidationResult


def validate_knowledge_graph(kg) -> ValidationResult:
    """
    Check the KnowledgeGraph invariants.

    Errors: ids out of range, non-dense dictionaries, filter index not equal to the split union.
    Warnings: entities or relations absent from train, duplicate triples within a split.
    """
    errors: List[str] = []
    warnings: List[str] = []

    # Dense ids
    for name, dictionary in (("entity", kg.entities), ("relation", kg.relations)):
        try:
            for idx, label in enumerate(dictionary.labels):
                if dictionary.encode(label) != idx:
                    errors.append(f"{name} dictionary: label {label!r} does not round-trip to id {idx}")
                    break
        except Exception as e:
            errors.append(f"{name} dictionary: {str(e)}")

    # Id ranges
    union = set()
    for split in ("train", "valid", "test"):
        rows = kg.split(split)
        if rows.size == 0:
            if split == "train":
                errors.append("train: split is empty")
            continue
        if (rows[:, [0, 2]] >= kg.n_entities).any() or (rows[:, 1] >= kg.n_relations).any() or (rows < 0).any():
            errors.append(f"{split}: ids out of range")
        triples = [tuple(row) for row in rows.tolist()]
        if len(set(triples)) < len(triples):
            warnings.append(f"{split}: {len(triples) - len(set(triples))} duplicate triples")
        union.update(triples)

    # Filter index
    if len(union) != kg.n_known or not all(kg.contains(t) for t in union):
        errors.append("filter index does not equal train + valid + test")

    # Coverage by train
    if kg.train.size:
        train_entities = np.union1d(kg.train[:, 0], kg.train[:, 2])
        train_relations = np.unique(kg.train[:, 1])
        missing_entities = kg.n_entities - len(train_entities)
        missing_relations = kg.n_relations - len(train_relations)
        if missing_entities:
            warnings.append(f"{missing_entities} entities never appear in train")
        if missing_relations:
            warnings.append(f"{missing_relations} relations never appear in train")

    return ValidationResult(is_valid=not errors, errors=errors, warnings=warnings)


def get_validation_summary(result: ValidationResult) -> str:
    """
    Generate a human-readable validation summary.
    """
    if result.is_valid:
        summary = "✓ Knowledge graph is valid"
        if result.warnings:
            summary += f" ({len(result.warnings)} warnings)"
    else:
        summary = f"✗ Knowledge graph is invalid ({len(result.errors)} errors"
        if result.warnings:
            summary += f", {len(result.warnings)} warnings"
        summary += ")"

    return summary
