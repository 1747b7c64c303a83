"""Pytest configuration and shared fixtures"""

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kg_data.service import KnowledgeGraph
from shared import config as shared_config

# Configure Hypothesis for property-based testing
_relaxed = dict(deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.register_profile("ci", max_examples=100, **_relaxed)
settings.register_profile("dev", max_examples=10, **_relaxed)
settings.register_profile("debug", max_examples=10, verbosity=2, **_relaxed)

# Load the appropriate profile
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))

# Planted KG: 16 triangles (x, y, z) = (3i, 3i+1, 3i+2) plus the pair (48, 49).
# Even triangles use relations 0, 1, 2 and odd ones 0, 1, 3, so translations with
# r2 = r0 + r1 and r3 = r1 - r0 reproduce every fact exactly.
PLANTED_ENTITIES = 50
PLANTED_RELATIONS = 4
PLANTED_TRIANGLES = 16


def planted_triangle(i: int):
    """The three facts of triangle i, in holdout order."""
    x, y, z = 3 * i, 3 * i + 1, 3 * i + 2
    if i % 2 == 0:
        return [(x, 0, y), (y, 1, z), (x, 2, z)]
    return [(x, 0, y), (x, 1, z), (y, 3, z)]


def planted_triples():
    """All planted facts; the tail is a function of (head, relation)."""
    facts = [fact for i in range(PLANTED_TRIANGLES) for fact in planted_triangle(i)]
    facts.append((48, 0, 49))
    return np.array(facts, dtype=np.int64)


def planted_splits():
    """
    39/5/5 split (80/10/10) of the planted facts.

    Triangles 0-4 give one validation fact each and triangles 5-9 one test fact each,
    fact i % 3 of triangle i; the two remaining facts of those triangles stay in train,
    so every held-out fact follows from training facts.
    """
    valid, test, train = [], [], []
    for i in range(PLANTED_TRIANGLES):
        for k, fact in enumerate(planted_triangle(i)):
            if i < 10 and k == i % 3:
                (valid if i < 5 else test).append(fact)
            else:
                train.append(fact)
    train.append((48, 0, 49))
    return tuple(np.array(rows, dtype=np.int64) for rows in (train, valid, test))


def write_triples(path: Path, rows) -> Path:
    """Write labelled triples as tab-separated lines."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        for h, r, t in rows:
            f.write(f"{h}\t{r}\t{t}\n")
    return path


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Reset the settings singleton so environment overrides in one test do not leak."""
    monkeypatch.setattr(shared_config, "_settings_instance", None)
    yield
    shared_config._settings_instance = None


@pytest.fixture
def rng():
    """Seeded numpy Generator"""
    return np.random.default_rng(0)


@pytest.fixture
def toy_files(tmp_path):
    """Small labelled KG: 5 entities, 2 relations, 4/1/1 triples"""
    train = write_triples(tmp_path / "train.txt", [
        ("alice", "knows", "bob"),
        ("bob", "knows", "carol"),
        ("carol", "likes", "dave"),
        ("alice", "likes", "carol"),
    ])
    valid = write_triples(tmp_path / "valid.txt", [("bob", "likes", "dave")])
    test = write_triples(tmp_path / "test.txt", [("dave", "knows", "erin")])
    return train, valid, test


@pytest.fixture
def planted_kg():
    """Planted translational KG with 50 entities and 4 relations"""
    train, valid, test = planted_splits()
    return KnowledgeGraph.from_triples(train, valid, test, n_entities=PLANTED_ENTITIES, n_relations=PLANTED_RELATIONS)


@pytest.fixture
def planted_files(tmp_path):
    """The planted KG written as labelled split files"""
    folder = tmp_path / "planted"
    folder.mkdir()
    paths = []
    for name, rows in zip(("train", "valid", "test"), planted_splits()):
        labelled = [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in rows]
        paths.append(write_triples(folder / f"{name}.txt", labelled))
    return tuple(paths)


def finite_difference_error(f, X, analytic, rng, n_coords=200, h=1e-5):
    """
    Max relative error between `analytic` and central differences of scalar `f` at `X`,
    over `n_coords` random coordinates.
    """
    X = np.array(X, dtype=np.float64)
    flat = rng.choice(X.size, size=min(n_coords, X.size), replace=False)
    worst = 0.0
    for index in flat:
        idx = np.unravel_index(index, X.shape)
        original = X[idx]
        X[idx] = original + h
        up = f(X)
        X[idx] = original - h
        down = f(X)
        X[idx] = original
        numeric = (up - down) / (2 * h)
        exact = analytic[idx]
        worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-3))
    return worst
