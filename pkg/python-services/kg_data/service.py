"""
KG Data Service - triple files, id dictionaries and the filtered-evaluation index
Loads tab-separated (head, relation, tail) files into an immutable KnowledgeGraph
"""

from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np
from loguru import logger

from shared.errors import DatasetError, IdRangeError, TripleParseError
from shared.models import DatasetStats

PathLike = Union[str, Path]
SPLITS = ("train", "valid", "test")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class LabelDictionary:
    """Bidirectional label <-> dense id map, ids assigned in first-seen order"""

    def __init__(self, labels: Iterable[str] = ()):
        self._to_id: Dict[str, int] = {}
        self._labels: List[str] = []
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._to_id.get(label)
        if idx is None:
            idx = len(self._labels)
            self._to_id[label] = idx
            self._labels.append(label)
        return idx

    def encode(self, label: str) -> int:
        try:
            return self._to_id[label]
        except KeyError:
            raise KeyError(f"Unknown label: {label!r}") from None

    def decode(self, idx: int) -> str:
        if not 0 <= idx < len(self._labels):
            raise IdRangeError(f"Id {idx} out of range for dictionary of size {len(self._labels)}")
        return self._labels[idx]

    def __contains__(self, label: str) -> bool:
        return label in self._to_id

    def __len__(self) -> int:
        return len(self._labels)

    @property
    def labels(self) -> List[str]:
        return list(self._labels)


class KnowledgeGraph:
    """
    Entity/relation dictionaries, the three splits and the filter index.

    Features:
    - Splits stored as (n, 3) int64 arrays in file order (duplicates kept)
    - Filter index over train + valid + test keyed by (relation, tail) and (head, relation)
    - Train-only index for negative-sampling filtering against the training split

    Immutable after construction; safe to share across evaluation workers.
    """

    def __init__(
        self,
        entities: LabelDictionary,
        relations: LabelDictionary,
        train: np.ndarray,
        valid: np.ndarray,
        test: np.ndarray,
    ):
        self.entities = entities
        self.relations = relations
        self.train = self._freeze(train)
        self.valid = self._freeze(valid)
        self.test = self._freeze(test)

        for name in SPLITS:
            self._check_range(name, self.split(name))

        heads: Dict[Tuple[int, int], Set[int]] = {}
        tails: Dict[Tuple[int, int], Set[int]] = {}
        known: Set[Triple] = set()
        for name in SPLITS:
            for h, r, t in self.split(name).tolist():
                known.add(Triple(h, r, t))
                heads.setdefault((r, t), set()).add(h)
                tails.setdefault((h, r), set()).add(t)

        self._heads_of: Dict[Tuple[int, int], FrozenSet[int]] = {k: frozenset(v) for k, v in heads.items()}
        self._tails_of: Dict[Tuple[int, int], FrozenSet[int]] = {k: frozenset(v) for k, v in tails.items()}
        self._known: FrozenSet[Triple] = frozenset(known)
        self._train_known: FrozenSet[Triple] = frozenset(Triple(*row) for row in self.train.tolist())

    @staticmethod
    def _freeze(rows) -> np.ndarray:
        arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        arr.setflags(write=False)
        return arr

    def _check_range(self, name: str, rows: np.ndarray) -> None:
        if rows.size == 0:
            return
        if rows.min() < 0:
            raise IdRangeError(f"{name}: negative id")
        if rows[:, [0, 2]].max() >= self.n_entities:
            raise IdRangeError(f"{name}: entity id >= {self.n_entities}")
        if rows[:, 1].max() >= self.n_relations:
            raise IdRangeError(f"{name}: relation id >= {self.n_relations}")

    @classmethod
    def from_triples(
        cls,
        train: Sequence[Sequence[int]],
        valid: Sequence[Sequence[int]] = (),
        test: Sequence[Sequence[int]] = (),
        n_entities: int = None,
        n_relations: int = None,
    ) -> "KnowledgeGraph":
        """Build a KG directly from integer triples, with labels 'e<id>' / 'r<id>'."""
        rows = [np.asarray(s, dtype=np.int64).reshape(-1, 3) for s in (train, valid, test)]
        stacked = np.concatenate(rows)
        if n_entities is None:
            n_entities = int(stacked[:, [0, 2]].max()) + 1 if stacked.size else 0
        if n_relations is None:
            n_relations = int(stacked[:, 1].max()) + 1 if stacked.size else 0
        return cls(
            LabelDictionary(f"e{i}" for i in range(n_entities)),
            LabelDictionary(f"r{i}" for i in range(n_relations)),
            *rows,
        )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"Split must be one of {SPLITS}, got {name!r}")
        return getattr(self, name)

    def contains(self, triple: Sequence[int], train_only: bool = False) -> bool:
        index = self._train_known if train_only else self._known
        return Triple(*map(int, triple)) in index

    def known_heads(self, relation: int, tail: int) -> FrozenSet[int]:
        return self._heads_of.get((relation, tail), frozenset())

    def known_tails(self, head: int, relation: int) -> FrozenSet[int]:
        return self._tails_of.get((head, relation), frozenset())

    @property
    def n_known(self) -> int:
        return len(self._known)


def _parse_triple_file(path: PathLike) -> List[Tuple[str, str, str]]:
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripleParseError(path, line_number, f"expected 3 tab-separated fields, got {len(fields)}")
            if not all(fields):
                raise TripleParseError(path, line_number, "empty field")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def load_knowledge_graph(train_path: PathLike, valid_path: PathLike, test_path: PathLike) -> KnowledgeGraph:
    """
    Load the three split files into a KnowledgeGraph.

    Dictionaries are built over train -> valid -> test in first-seen order.

    Args:
        train_path: Training triples (must be non-empty)
        valid_path: Validation triples
        test_path: Test triples

    Returns:
        KnowledgeGraph with the filter index populated

    Raises:
        TripleParseError: On a malformed line (file and line number in the message)
        DatasetError: If the training file is empty
    """
    paths = {"train": train_path, "valid": valid_path, "test": test_path}
    logger.info(f"Loading triples: {', '.join(f'{k}={v}' for k, v in paths.items())}")

    entities = LabelDictionary()
    relations = LabelDictionary()
    encoded: Dict[str, np.ndarray] = {}
    train_size = (0, 0)

    for name, path in paths.items():
        rows = _parse_triple_file(path)
        if name == "train" and not rows:
            raise DatasetError(f"{path}: training file is empty")
        encoded[name] = np.array(
            [(entities.add(h), relations.add(r), entities.add(t)) for h, r, t in rows],
            dtype=np.int64,
        ).reshape(-1, 3)
        if name == "train":
            train_size = (len(entities), len(relations))

    unseen_entities = len(entities) - train_size[0]
    unseen_relations = len(relations) - train_size[1]
    if unseen_entities or unseen_relations:
        logger.warning(
            f"{unseen_entities} entities and {unseen_relations} relations appear only in valid/test"
        )

    kg = KnowledgeGraph(entities, relations, encoded["train"], encoded["valid"], encoded["test"])
    logger.success(f"Loaded KG: {stats(kg).as_tuple()}")
    return kg


def stats(kg: KnowledgeGraph) -> DatasetStats:
    """Entity, relation and split counts"""
    return DatasetStats(
        n_entities=kg.n_entities,
        n_relations=kg.n_relations,
        n_train=len(kg.train),
        n_valid=len(kg.valid),
        n_test=len(kg.test),
    )


def filtered_candidates(
    kg: KnowledgeGraph,
    query: Tuple[Optional[int], int, Optional[int]],
    gold: int,
) -> Set[int]:
    """
    Entities to exclude when ranking `gold` for a head query (None, r, t) or tail query (h, r, None).

    Returns every entity that completes the query into a known triple, except `gold`.

    Raises:
        IdRangeError: On out-of-range ids
        ValueError: If the query does not have exactly one missing slot
    """
    head, relation, tail = query
    if (head is None) == (tail is None):
        raise ValueError("Query must leave exactly one of head/tail open")
    if not 0 <= relation < kg.n_relations:
        raise IdRangeError(f"Relation id {relation} out of range")
    for entity in (head, tail, gold):
        if entity is not None and not 0 <= entity < kg.n_entities:
            raise IdRangeError(f"Entity id {entity} out of range")

    if head is None:
        known = kg.known_heads(relation, tail)
    else:
        known = kg.known_tails(head, relation)
    return set(known) - {gold}
