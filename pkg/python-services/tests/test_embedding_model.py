"""
Unit tests for embedding tables, score functions, decompositions and checkpoints.
"""

import numpy as np
import pytest

from embedding_model.service import (
    CHECKPOINT_MAGIC,
    Decomposition,
    EmbeddingModel,
    align_relation_offset,
    batch_from_matrices,
    build_batch,
    get_decomposition,
    init_model,
    load_checkpoint,
    save_checkpoint,
    score,
    score_all_heads,
    score_all_tails,
    score_triples,
)
from kg_data.service import KnowledgeGraph
from losses.service import nsf_loss
from shared.errors import CheckpointError, IdRangeError, ShapeError
from shared.models import LossConfig, ModelKind, SDBNConfig, TrainConfig, TrainingObjective


@pytest.fixture
def small_kg():
    return KnowledgeGraph.from_triples(train=[(0, 0, 1), (1, 1, 2), (2, 0, 3)], n_entities=4, n_relations=2)


class TestInitModel:
    """Tests for init_model"""

    def test_shapes_and_bounds(self, small_kg):
        """Test table shapes and the uniform init range"""
        model = init_model(small_kg, ModelKind.DISTMULT, 9, rng=0)
        assert model.entity_table.shape == (4, 9)
        assert model.relation_table.shape == (2, 9)
        assert np.all(np.abs(model.entity_table) <= 6.0 / 3.0)

    def test_same_seed_bit_identical(self, small_kg):
        """Test reproducible initialization"""
        a = init_model(small_kg, ModelKind.TRANSE_L1, 5, rng=123)
        b = init_model(small_kg, ModelKind.TRANSE_L1, 5, rng=123)
        assert a.entity_table.tobytes() == b.entity_table.tobytes()
        assert a.relation_table.tobytes() == b.relation_table.tobytes()

    def test_invalid_dimension(self, small_kg):
        """Test d < 1"""
        with pytest.raises(ValueError):
            init_model(small_kg, ModelKind.DISTMULT, 0)

    def test_explicit_bound(self, small_kg):
        """Test a narrower init range"""
        model = init_model(small_kg, ModelKind.TRANSE_L2, 16, rng=0, bound=1.0 / 16)
        assert np.all(np.abs(model.entity_table) <= 1.0 / 16)
        assert np.all(np.abs(model.relation_table) <= 1.0 / 16)
        with pytest.raises(ValueError):
            init_model(small_kg, ModelKind.TRANSE_L2, 16, bound=0.0)

    def test_resolved_bound_per_objective(self):
        """Test 1/d for NSF training and 6/sqrt(d) for the baselines"""
        nsf = TrainConfig(lr=1e-3, batch_size=4)
        baseline = TrainConfig(lr=1e-3, batch_size=4, objective=TrainingObjective.NEGATIVE_SAMPLING)
        assert nsf.resolved_init_bound(16) == pytest.approx(1.0 / 16)
        assert baseline.resolved_init_bound(16) == pytest.approx(1.5)
        assert TrainConfig(lr=1e-3, batch_size=4, init_bound=0.2).resolved_init_bound(16) == 0.2


class TestAlignRelationOffset:
    """Tests for align_relation_offset"""

    def test_mean_residual_becomes_zero(self, small_kg, rng):
        """Test that h + r - t averages to zero over the given triples"""
        model = init_model(small_kg, ModelKind.TRANSE_L2, 6, rng=rng)
        shift = align_relation_offset(model, small_kg.train)
        assert shift.shape == (6,)
        E, R = model.entity_table, model.relation_table
        h, r, t = small_kg.train.T
        np.testing.assert_allclose((E[h] + R[r] - E[t]).mean(axis=0), 0.0, atol=1e-12)

    def test_translational_loss_unchanged(self, small_kg):
        """Test that the shift leaves the NSF loss and its gradients as they were"""
        model = init_model(small_kg, ModelKind.TRANSE_L2, 4, rng=5)
        before_value, before_grads = nsf_loss(build_batch(model, small_kg.train), LossConfig(extended_terms=True))
        align_relation_offset(model, small_kg.train)
        after_value, after_grads = nsf_loss(build_batch(model, small_kg.train), LossConfig(extended_terms=True))
        assert after_value.total == pytest.approx(before_value.total, abs=1e-10)
        np.testing.assert_allclose(after_grads.dR, before_grads.dR, atol=1e-9)
        np.testing.assert_allclose(after_grads.dH, before_grads.dH, atol=1e-9)

    def test_distmult_rejected(self, small_kg):
        """Test that only TransE models are aligned"""
        model = init_model(small_kg, ModelKind.DISTMULT, 4, rng=0)
        with pytest.raises(ValueError):
            align_relation_offset(model, small_kg.train)


class TestScore:
    """Tests for the score functions"""

    def _model(self, kind):
        E = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        R = np.array([[0.0, 1.0]])
        return EmbeddingModel(E, R, kind)

    def test_transe_l2(self):
        """Test h=(1,0), r=(0,1), t=(0,0) scores -sqrt(2)"""
        assert score(self._model(ModelKind.TRANSE_L2), (0, 0, 1)) == pytest.approx(-np.sqrt(2.0))

    def test_transe_l1(self):
        """Test the L1 variant scores -2"""
        assert score(self._model(ModelKind.TRANSE_L1), (0, 0, 1)) == pytest.approx(-2.0)

    def test_transe_exact_translation(self):
        """Test that t = h + r scores 0"""
        assert score(self._model(ModelKind.TRANSE_L2), (0, 0, 2)) == 0.0

    def test_distmult(self):
        """Test the trilinear product"""
        E = np.array([[1.0, 2.0, 3.0], [2.0, 1.0, 1.0]])
        R = np.array([[1.0, 1.0, 1.0]])
        assert score(EmbeddingModel(E, R, ModelKind.DISTMULT), (0, 0, 1)) == pytest.approx(7.0)

    def test_out_of_range(self):
        """Test unknown ids"""
        with pytest.raises(IdRangeError):
            score(self._model(ModelKind.DISTMULT), (0, 1, 1))

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_vectorized_scores_match_single(self, small_kg, kind):
        """Test that all-entity and batched scoring agree with score()"""
        model = init_model(small_kg, kind, 6, rng=4)
        heads = score_all_heads(model, 1, 2)
        tails = score_all_tails(model, 0, 1)
        for e in range(model.n_entities):
            assert heads[e] == pytest.approx(score(model, (e, 1, 2)), rel=1e-12, abs=1e-12)
            assert tails[e] == pytest.approx(score(model, (0, 1, e)), rel=1e-12, abs=1e-12)
        batched = score_triples(model, small_kg.train)
        np.testing.assert_allclose(batched, [score(model, t) for t in small_kg.train], rtol=1e-12)

    def test_distmult_symmetric(self, small_kg, rng):
        """Test f(h, r, t) = f(t, r, h) for DistMult"""
        model = init_model(small_kg, ModelKind.DISTMULT, 8, rng=rng)
        assert score(model, (0, 1, 3)) == pytest.approx(score(model, (3, 1, 0)), rel=1e-12)


class TestDecomposition:
    """Tests for g1/g2 and Batch construction"""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_two_forms_agree_with_score(self, small_kg, kind):
        """Test f(h, r, t) = s(g1(h, r), t) = s(h, g2(t, r))"""
        model = init_model(small_kg, kind, 5, rng=9)
        batch = build_batch(model, small_kg.train)
        direct = score_triples(model, small_kg.train)
        if kind is ModelKind.DISTMULT:
            np.testing.assert_allclose((batch.H_pipe * batch.T).sum(axis=1), direct, rtol=1e-12)
            np.testing.assert_allclose((batch.H * batch.T_pipe).sum(axis=1), direct, rtol=1e-12)
        else:
            order = kind.norm_order
            np.testing.assert_allclose(-np.linalg.norm(batch.H_pipe - batch.T, ord=order, axis=1), direct, rtol=1e-12)
            np.testing.assert_allclose(-np.linalg.norm(batch.H - batch.T_pipe, ord=order, axis=1), direct, rtol=1e-12)

    def test_loss_family_override(self, small_kg):
        """Test that a TransE model can build DistMult-style loss inputs"""
        model = init_model(small_kg, ModelKind.TRANSE_L2, 4, rng=1)
        batch = build_batch(model, small_kg.train, family="distmult")
        np.testing.assert_array_equal(batch.H_pipe, batch.H * batch.R)

    def test_unknown_family(self):
        """Test an unregistered decomposition"""
        with pytest.raises(ValueError):
            get_decomposition("rotate")

    def test_incomplete_decomposition_cannot_be_instantiated(self):
        """Test that a kind missing the backward maps fails at construction"""
        class ForwardOnly(Decomposition):
            name = "forward-only"

            def g1(self, H, R):
                return H

            def g2(self, T, R):
                return T

        with pytest.raises(TypeError):
            ForwardOnly()

    def test_empty_batch(self, small_kg):
        """Test that an empty triple list is refused"""
        model = init_model(small_kg, ModelKind.DISTMULT, 4, rng=1)
        with pytest.raises(ShapeError):
            build_batch(model, np.empty((0, 3), dtype=np.int64))

    def test_sdbn_inputs_whitened(self, rng):
        """Test that SDBN replaces the four loss inputs and keeps the raw rows"""
        H, R, T = (rng.normal(size=(32, 6)) for _ in range(3))
        batch = batch_from_matrices(H, R, T, "transe", sdbn=SDBNConfig(group_size=3), rng=rng)
        assert set(batch.sdbn_states) == {"H_pipe", "H", "T", "T_pipe"}
        np.testing.assert_array_equal(batch.H, H)
        assert not np.allclose(batch.inputs["H"], H)
        np.testing.assert_allclose(batch.inputs["T"].mean(axis=0), 0.0, atol=1e-12)


class TestCheckpoint:
    """Tests for save_checkpoint and load_checkpoint"""

    def test_round_trip(self, small_kg, tmp_path):
        """Test that tables and kind survive a save/load"""
        model = init_model(small_kg, ModelKind.TRANSE_L1, 7, rng=2)
        path = save_checkpoint(model, tmp_path / "best.kgnsf")
        loaded = load_checkpoint(path, small_kg)

        assert loaded.kind is ModelKind.TRANSE_L1
        np.testing.assert_array_equal(loaded.entity_table, model.entity_table)
        np.testing.assert_array_equal(loaded.relation_table, model.relation_table)

    def test_header_layout(self, small_kg, tmp_path):
        """Test magic, tag and size"""
        model = init_model(small_kg, ModelKind.DISTMULT, 3, rng=2)
        data = save_checkpoint(model, tmp_path / "m.kgnsf").read_bytes()
        assert data[:6] == CHECKPOINT_MAGIC
        assert data[6] == 3
        assert len(data) == 6 + 1 + 3 * 8 + 8 * 3 * (4 + 2)

    def test_bad_magic_names_file(self, small_kg, tmp_path):
        """Test a corrupted header"""
        path = save_checkpoint(init_model(small_kg, ModelKind.DISTMULT, 3, rng=2), tmp_path / "m.kgnsf")
        data = bytearray(path.read_bytes())
        data[0:6] = b"XXXXXX"
        path.write_bytes(bytes(data))

        with pytest.raises(CheckpointError) as exc_info:
            load_checkpoint(path)
        assert "m.kgnsf" in str(exc_info.value)

    def test_truncated(self, small_kg, tmp_path):
        """Test a short file"""
        path = save_checkpoint(init_model(small_kg, ModelKind.DISTMULT, 3, rng=2), tmp_path / "m.kgnsf")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_kg_mismatch(self, small_kg, tmp_path):
        """Test a checkpoint whose counts differ from the KG"""
        path = save_checkpoint(init_model(small_kg, ModelKind.DISTMULT, 3, rng=2), tmp_path / "m.kgnsf")
        other = KnowledgeGraph.from_triples(train=[(0, 0, 1)], n_entities=5, n_relations=2)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, other)
