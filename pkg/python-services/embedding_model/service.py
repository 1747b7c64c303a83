"""
Embedding Model Service - entity/relation tables and score functions
Builds the relation-transformed batch matrices (H|, T|) from each score function's
two-form decomposition, and reads/writes binary checkpoints.
"""

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from kg_data.service import KnowledgeGraph
from shared.errors import CheckpointError, IdRangeError, ShapeError
from shared.models import ModelKind, SDBNConfig
from tensor_ops.service import ShuffleState, gather_rows, shuffled_dbn, shuffled_dbn_backward

CHECKPOINT_MAGIC = b"KGNSF1"
_HEADER = struct.Struct("<6sBqqq")


class EmbeddingModel:
    """
    Dense entity (|E| x d) and relation (|R| x d) tables plus the score-function kind.

    The entity and relation dimensions are equal (d = d_e = d_r).
    """

    def __init__(self, entity_table: np.ndarray, relation_table: np.ndarray, kind: ModelKind):
        entity_table = np.ascontiguousarray(entity_table, dtype=np.float64)
        relation_table = np.ascontiguousarray(relation_table, dtype=np.float64)
        if entity_table.ndim != 2 or relation_table.ndim != 2:
            raise ShapeError("Embedding tables must be 2-D")
        if entity_table.shape[1] != relation_table.shape[1]:
            raise ShapeError(
                f"Entity dim {entity_table.shape[1]} != relation dim {relation_table.shape[1]}"
            )
        self.entity_table = entity_table
        self.relation_table = relation_table
        self.kind = ModelKind(kind)

    @property
    def dim(self) -> int:
        return self.entity_table.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_table.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_table.shape[0]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.entity_table.copy(), self.relation_table.copy(), self.kind)

    def check_entity(self, idx: int) -> None:
        if not 0 <= idx < self.n_entities:
            raise IdRangeError(f"Entity id {idx} out of range [0, {self.n_entities})")

    def check_relation(self, idx: int) -> None:
        if not 0 <= idx < self.n_relations:
            raise IdRangeError(f"Relation id {idx} out of range [0, {self.n_relations})")

    def normalize_entities(self) -> None:
        """L2-normalize every entity row in place (negative-sampling baselines only)."""
        norms = np.linalg.norm(self.entity_table, axis=1, keepdims=True)
        self.entity_table /= np.where(norms > 0.0, norms, 1.0)


def init_model(
    kg: KnowledgeGraph,
    kind: Union[ModelKind, str],
    d: int,
    rng: Union[np.random.Generator, int, None] = None,
    bound: Optional[float] = None,
) -> EmbeddingModel:
    """
    Initialize tables uniformly in [-bound, bound].

    Args:
        kg: Knowledge graph fixing |E| and |R|
        kind: Score-function kind
        d: Embedding dimension
        rng: Generator or seed; the same seed yields bit-identical tables
        bound: Half-width of the uniform draw; defaults to 6/sqrt(d).
            NSF training passes a smaller one (TrainConfig.resolved_init_bound)

    Raises:
        ValueError: If d < 1 or bound <= 0
    """
    if d < 1:
        raise ValueError(f"Embedding dimension must be >= 1, got {d}")
    if bound is None:
        bound = 6.0 / np.sqrt(d)
    if bound <= 0.0:
        raise ValueError(f"Init bound must be > 0, got {bound}")
    rng = np.random.default_rng(rng)
    entity_table = rng.uniform(-bound, bound, size=(kg.n_entities, d))
    relation_table = rng.uniform(-bound, bound, size=(kg.n_relations, d))
    logger.debug(f"Initialized {kind} model: |E|={kg.n_entities}, |R|={kg.n_relations}, d={d}")
    return EmbeddingModel(entity_table, relation_table, ModelKind(kind))


# ---------------------------------------------------------------------------
# Score functions
# ---------------------------------------------------------------------------

def _score_rows(kind: ModelKind, H: np.ndarray, R: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Row-wise scores; higher is more plausible for every kind."""
    if kind is ModelKind.DISTMULT:
        return ((H * R) * T).sum(axis=-1)
    diff = (H + R) - T
    if kind is ModelKind.TRANSE_L1:
        return -np.abs(diff).sum(axis=-1)
    return -np.sqrt((diff * diff).sum(axis=-1))


def score(model: EmbeddingModel, triple: Sequence[int]) -> float:
    """Score of a single (head, relation, tail) triple."""
    h, r, t = (int(x) for x in triple)
    model.check_entity(h)
    model.check_relation(r)
    model.check_entity(t)
    E, Rel = model.entity_table, model.relation_table
    return float(_score_rows(model.kind, E[h:h + 1], Rel[r:r + 1], E[t:t + 1])[0])


def score_triples(model: EmbeddingModel, triples: np.ndarray) -> np.ndarray:
    """Scores for an (n, 3) array of triples."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    H = gather_rows(model.entity_table, triples[:, 0])
    R = gather_rows(model.relation_table, triples[:, 1])
    T = gather_rows(model.entity_table, triples[:, 2])
    return _score_rows(model.kind, H, R, T)


def score_all_heads(model: EmbeddingModel, r: int, t: int) -> np.ndarray:
    """Scores of (e, r, t) for every entity e, in one pass over the entity table."""
    model.check_relation(r)
    model.check_entity(t)
    E = model.entity_table
    return _score_rows(model.kind, E, model.relation_table[r], E[t])


def score_all_tails(model: EmbeddingModel, h: int, r: int) -> np.ndarray:
    """Scores of (h, r, e) for every entity e, in one pass over the entity table."""
    model.check_entity(h)
    model.check_relation(r)
    E = model.entity_table
    return _score_rows(model.kind, E[h], model.relation_table[r], E)


def align_relation_offset(model: EmbeddingModel, triples: np.ndarray) -> np.ndarray:
    """
    Shift every relation row by the mean residual t - h - r over `triples`, in place.

    Column-centered losses built on the translational decomposition are unchanged by a
    common shift of all relation rows, while the TransE score is not; afterwards the
    mean of h + r - t over `triples` is zero.

    Returns:
        The d-vector added to each relation row

    Raises:
        ValueError: For a DistMult model
    """
    if model.kind.family != "transe":
        raise ValueError(f"Relation offset alignment needs a TransE model, got {model.kind.value}")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        return np.zeros(model.dim)
    E, Rel = model.entity_table, model.relation_table
    residual = E[triples[:, 2]] - E[triples[:, 0]] - Rel[triples[:, 1]]
    shift = residual.mean(axis=0)
    model.relation_table += shift
    return shift


# ---------------------------------------------------------------------------
# Two-form decompositions: f(h, r, t) = s(g1(h, r), t) = s(h, g2(t, r))
# ---------------------------------------------------------------------------

class Decomposition(ABC):
    """
    Base for a score function's (g1, g2) pair.

    A new kind (TransH, SimplE, ...) plugs in by implementing these four methods.
    """

    name = "base"

    @abstractmethod
    def g1(self, H: np.ndarray, R: np.ndarray) -> np.ndarray:
        """H| from head and relation rows"""

    @abstractmethod
    def g2(self, T: np.ndarray, R: np.ndarray) -> np.ndarray:
        """T| from tail and relation rows"""

    @abstractmethod
    def g1_backward(self, grad: np.ndarray, H: np.ndarray, R: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(dH, dR) given dL/dH|"""

    @abstractmethod
    def g2_backward(self, grad: np.ndarray, T: np.ndarray, R: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(dT, dR) given dL/dT|"""


class TranslationalDecomposition(Decomposition):
    """TransE: H| = H + R, T| = T - R"""

    name = "transe"

    def g1(self, H, R):
        return H + R

    def g2(self, T, R):
        return T - R

    def g1_backward(self, grad, H, R):
        return grad, grad

    def g2_backward(self, grad, T, R):
        return grad, -grad


class BilinearDecomposition(Decomposition):
    """DistMult: H| = H * R, T| = T * R (Hadamard)"""

    name = "distmult"

    def g1(self, H, R):
        return H * R

    def g2(self, T, R):
        return T * R

    def g1_backward(self, grad, H, R):
        return grad * R, grad * H

    def g2_backward(self, grad, T, R):
        return grad * R, grad * T


DECOMPOSITIONS: Dict[str, Decomposition] = {
    "transe": TranslationalDecomposition(),
    "distmult": BilinearDecomposition(),
}


def get_decomposition(family: str) -> Decomposition:
    try:
        return DECOMPOSITIONS[family]
    except KeyError:
        raise ValueError(f"Unknown decomposition family: {family!r}") from None


# Order in which SDBN permutations are drawn; fixed so runs are reproducible
LOSS_INPUTS = ("H_pipe", "H", "T", "T_pipe")


@dataclass
class Batch:
    """
    Per-step matrices gathered from the tables.

    H, R, T are raw rows; H_pipe = g1(H, R), T_pipe = g2(T, R). `inputs` holds the
    four matrices fed to the loss (whitened copies when SDBN is enabled).
    """

    H: np.ndarray
    R: np.ndarray
    T: np.ndarray
    H_pipe: np.ndarray
    T_pipe: np.ndarray
    ids: Tuple[np.ndarray, np.ndarray, np.ndarray]
    decomposition: Decomposition
    inputs: Dict[str, np.ndarray] = field(default_factory=dict)
    sdbn_states: Optional[Dict[str, ShuffleState]] = None

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def backward(
        self,
        input_grads: Dict[str, np.ndarray],
        dH: Optional[np.ndarray] = None,
        dR: Optional[np.ndarray] = None,
        dT: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Chain loss-input gradients back to the raw H, R, T rows.

        Args:
            input_grads: dL/d(input) for any of H_pipe, H, T, T_pipe
            dH, dR, dT: Gradients already accumulated directly on the raw rows

        Returns:
            (dH, dR, dT)
        """
        dH = np.zeros_like(self.H) if dH is None else dH.copy()
        dR = np.zeros_like(self.R) if dR is None else dR.copy()
        dT = np.zeros_like(self.T) if dT is None else dT.copy()

        raw = {}
        for name, grad in input_grads.items():
            if self.sdbn_states is not None:
                grad = shuffled_dbn_backward(grad, self.sdbn_states[name])
            raw[name] = grad

        if "H" in raw:
            dH += raw["H"]
        if "T" in raw:
            dT += raw["T"]
        if "H_pipe" in raw:
            gH, gR = self.decomposition.g1_backward(raw["H_pipe"], self.H, self.R)
            dH += gH
            dR += gR
        if "T_pipe" in raw:
            gT, gR = self.decomposition.g2_backward(raw["T_pipe"], self.T, self.R)
            dT += gT
            dR += gR
        return dH, dR, dT


def batch_from_matrices(
    H: np.ndarray,
    R: np.ndarray,
    T: np.ndarray,
    family: str,
    sdbn: Optional[SDBNConfig] = None,
    rng: Optional[np.random.Generator] = None,
    ids: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
    permutations: Optional[Dict[str, Sequence[int]]] = None,
) -> Batch:
    """
    Assemble a Batch from already-gathered rows.

    Args:
        H, R, T: b x d matrices
        family: Decomposition family ("transe" or "distmult")
        sdbn: Whitening config; None disables the transform
        rng: Draws the four SDBN permutations
        ids: Row ids the matrices were gathered from
        permutations: Explicit SDBN permutations per input (replays a previous pass)
    """
    H, R, T = (np.asarray(M, dtype=np.float64) for M in (H, R, T))
    if not (H.shape == R.shape == T.shape) or H.ndim != 2:
        raise ShapeError(f"Batch shapes differ: H{H.shape} R{R.shape} T{T.shape}")
    if H.shape[0] == 0:
        raise ShapeError("Empty batch")

    decomposition = get_decomposition(family)
    H_pipe = decomposition.g1(H, R)
    T_pipe = decomposition.g2(T, R)
    if ids is None:
        empty = np.empty(0, dtype=np.int64)
        ids = (empty, empty, empty)

    batch = Batch(H=H, R=R, T=T, H_pipe=H_pipe, T_pipe=T_pipe, ids=ids, decomposition=decomposition)
    raw = {"H_pipe": H_pipe, "H": H, "T": T, "T_pipe": T_pipe}

    if sdbn is None:
        batch.inputs = raw
        return batch

    batch.sdbn_states = {}
    for name in LOSS_INPUTS:
        perm = None if permutations is None else permutations[name]
        whitened, state = shuffled_dbn(raw[name], group_size=sdbn.group_size, rng=rng, permutation=perm)
        batch.inputs[name] = whitened
        batch.sdbn_states[name] = state
    return batch


def build_batch(
    model: EmbeddingModel,
    triples: np.ndarray,
    sdbn: Optional[SDBNConfig] = None,
    rng: Optional[np.random.Generator] = None,
    family: Optional[str] = None,
) -> Batch:
    """
    Gather H, R, T for `triples` and compute H| and T|.

    Args:
        model: Source of the embedding tables
        triples: (b, 3) id array
        sdbn: Optional whitening applied independently to H|, H, T, T|
        rng: Draws SDBN permutations
        family: Decomposition used for the loss; defaults to the model's own
            (a different family gives the cross-wired "Alt" configuration)

    Raises:
        ShapeError: If `triples` is empty
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ShapeError("Cannot build a batch from an empty triple list")
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    H = gather_rows(model.entity_table, heads)
    R = gather_rows(model.relation_table, rels)
    T = gather_rows(model.entity_table, tails)
    return batch_from_matrices(
        H, R, T,
        family=family or model.kind.family,
        sdbn=sdbn,
        rng=rng,
        ids=(heads, rels, tails),
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: EmbeddingModel, path: Union[str, Path]) -> Path:
    """
    Write header (magic, kind tag, |E|, |R|, d) then little-endian float64 entity and relation tables.
    """
    path = Path(path)
    header = _HEADER.pack(CHECKPOINT_MAGIC, model.kind.tag, model.n_entities, model.n_relations, model.dim)
    with open(path, "wb") as f:
        f.write(header)
        f.write(model.entity_table.astype("<f8").tobytes(order="C"))
        f.write(model.relation_table.astype("<f8").tobytes(order="C"))
    logger.debug(f"Checkpoint written: {path}")
    return path


def load_checkpoint(path: Union[str, Path], kg: Optional[KnowledgeGraph] = None) -> EmbeddingModel:
    """
    Read a checkpoint, validating the header and (optionally) its counts against `kg`.

    Raises:
        CheckpointError: Bad magic, unknown kind, truncated data or KG mismatch
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(path, f"cannot read checkpoint: {e}") from e

    if len(data) < _HEADER.size:
        raise CheckpointError(path, "file shorter than checkpoint header")
    magic, tag, n_entities, n_relations, dim = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(path, f"bad magic {magic!r}")
    try:
        kind = ModelKind.from_tag(tag)
    except ValueError as e:
        raise CheckpointError(path, str(e)) from e

    expected = _HEADER.size + 8 * dim * (n_entities + n_relations)
    if dim < 1 or len(data) != expected:
        raise CheckpointError(path, f"expected {expected} bytes, found {len(data)}")

    if kg is not None and (kg.n_entities, kg.n_relations) != (n_entities, n_relations):
        raise CheckpointError(
            path,
            f"checkpoint has |E|={n_entities}, |R|={n_relations}; "
            f"knowledge graph has |E|={kg.n_entities}, |R|={kg.n_relations}",
        )

    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    split = n_entities * dim
    return EmbeddingModel(
        body[:split].reshape(n_entities, dim),
        body[split:].reshape(n_relations, dim),
        kind,
    )
