"""Encoder forward contracts, masked-token training, classifier head."""

import math

import numpy as np
import pytest

from clustersum.encoder import (
    EncoderModel,
    ModelConfig,
    classify,
    evaluate_mlm,
    fine_tune_classifier,
    pretrain_mlm,
)
from clustersum.tensor import cross_entropy, no_grad
from clustersum.tokenizer import MASK_ID, build_vocab, encode, mask_for_mlm

from corpora import build_docs, graded_topic_texts, pair_texts


@pytest.fixture(scope="module")
def small_setup():
    rng = np.random.default_rng(0)
    texts = pair_texts(rng, num_docs=30, num_pairs=10, doc_len=10)
    vocab, docs = build_docs(texts, max_len=16)
    config = ModelConfig.desk_scale(vocab.size, max_len=16)
    model = EncoderModel(config, np.random.default_rng(1))
    return vocab, docs, config, model


class TestForward:
    def test_output_shapes(self, small_setup):
        vocab, docs, config, model = small_setup
        hidden, cls_embedding = model.forward(docs[0].ids)
        assert hidden.shape == (len(docs[0].ids), config.hidden_size)
        assert cls_embedding.shape == (config.hidden_size,)

    def test_sequence_too_long_rejected(self, small_setup):
        vocab, docs, config, model = small_setup
        with pytest.raises(ValueError, match="max_len"):
            model.forward(np.zeros(config.max_len + 1, dtype=np.intp))

    def test_position_embeddings_active(self, small_setup):
        """Swapping two body tokens changes the document embedding."""
        from clustersum.metrics import cosine_similarity

        vocab, docs, config, model = small_setup
        ids = list(docs[0].ids)
        assert ids[1] != ids[2]
        swapped = list(ids)
        swapped[1], swapped[2] = swapped[2], swapped[1]
        a = model.embed(ids)
        b = model.embed(swapped)
        assert not np.array_equal(a, b)
        assert cosine_similarity(a, b) < 1.0

    def test_eval_forward_deterministic(self, small_setup):
        vocab, docs, config, model = small_setup
        a = model.embed(docs[0].ids)
        b = model.embed(docs[0].ids)
        np.testing.assert_array_equal(a, b)

    def test_train_mode_with_fixed_seed_reproducible(self, small_setup):
        vocab, docs, config, model = small_setup
        with no_grad():
            h1, _ = model.forward(docs[0].ids, train=True, rng=np.random.default_rng(42))
            h2, _ = model.forward(docs[0].ids, train=True, rng=np.random.default_rng(42))
        np.testing.assert_array_equal(h1.data, h2.data)

    def test_bidirectional_attention(self, small_setup):
        """Changing a later token moves hidden states at earlier positions."""
        vocab, docs, config, model = small_setup
        ids = list(docs[0].ids)
        changed = list(ids)
        changed[-2] = MASK_ID
        with no_grad():
            h1, _ = model.forward(ids)
            h2, _ = model.forward(changed)
        assert not np.allclose(h1.data[1], h2.data[1])


class TestMlmTraining:
    def test_initial_loss_near_log_vocab(self, small_setup):
        vocab, docs, config, model = small_setup
        fresh = EncoderModel(config, np.random.default_rng(7))
        loss, _ = evaluate_mlm(fresh, docs, np.random.default_rng(2))
        expected = math.log(vocab.size)
        assert abs(loss - expected) < 0.2 * expected

    def test_loss_only_at_masked_positions(self, small_setup):
        """Junk target values at unmasked positions cannot reach the loss."""
        vocab, docs, config, model = small_setup
        doc = docs[0]
        masked, positions, originals = mask_for_mlm(doc, rng=np.random.default_rng(3))
        with no_grad():
            hidden, _ = model.forward(masked)
            restricted = cross_entropy(model.mlm_logits(hidden, positions), originals,
                                       reduction="mean")
            full_targets = np.array(doc.ids)
            full_targets_junk = full_targets.copy()
            for i in range(len(full_targets_junk)):
                if i not in positions:
                    full_targets_junk[i] = (full_targets_junk[i] + 1) % vocab.size
            all_logits = model.mlm_logits(hidden, np.arange(len(doc.ids)))
            from clustersum.tensor import gather_rows

            at_masked = gather_rows(all_logits, positions)
            a = cross_entropy(at_masked, full_targets[positions], reduction="mean").item()
            b = cross_entropy(at_masked, full_targets_junk[positions], reduction="mean").item()
        assert restricted.item() == pytest.approx(a, rel=1e-6)
        assert a == b

    def test_short_training_reduces_loss(self, small_setup):
        vocab, docs, config, _ = small_setup
        model, history = pretrain_mlm(docs, config, epochs=6,
                                      rng=np.random.default_rng(11),
                                      lr=1e-3, warmup_steps=20, batch_size=8)
        assert history[-1].loss < history[0].loss
        assert all(np.isfinite(h.loss) for h in history)

    def test_empty_corpus_rejected(self, small_setup):
        vocab, docs, config, model = small_setup
        with pytest.raises(ValueError, match="empty"):
            pretrain_mlm([], config, epochs=1, rng=np.random.default_rng(0))


@pytest.fixture(scope="module")
def labeled():
    rng = np.random.default_rng(5)
    texts, labels = graded_topic_texts(rng, docs_per_topic=25, words_per_topic=15,
                                       doc_len=8)
    vocab, docs = build_docs(texts, max_len=16, labels=labels)
    config = ModelConfig.desk_scale(vocab.size, max_len=16)
    return vocab, docs, config


class TestClassifier:
    def test_distribution_sums_to_one(self, labeled):
        vocab, docs, config = labeled
        model = EncoderModel(config, np.random.default_rng(1))
        model.add_classifier(3, np.random.default_rng(2))
        probs = classify(model, docs[0])
        assert probs.shape == (3,)
        assert np.all(probs >= 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_single_label_degenerate(self, labeled):
        vocab, docs, config = labeled
        model = EncoderModel(config, np.random.default_rng(1))
        model.add_classifier(1, np.random.default_rng(2))
        np.testing.assert_allclose(classify(model, docs[0]), [1.0])

    def test_missing_head_is_contract_error(self, labeled):
        vocab, docs, config = labeled
        model = EncoderModel(config, np.random.default_rng(1))
        with pytest.raises(ValueError, match="classifier"):
            classify(model, docs[0])

    def test_unlabeled_document_rejected(self, labeled):
        vocab, docs, config = labeled
        model = EncoderModel(config, np.random.default_rng(1))
        stripped = [type(d)(doc_id=d.doc_id, ids=d.ids, label=None) for d in docs]
        with pytest.raises(ValueError, match="label"):
            fine_tune_classifier(model, stripped, num_labels=2, epochs=1,
                                 rng=np.random.default_rng(3))

    def test_disjoint_vocab_linearly_separable(self, labeled):
        vocab, docs, config = labeled
        model = EncoderModel(config, np.random.default_rng(1))
        model, history = fine_tune_classifier(
            model, docs, num_labels=2, epochs=8, rng=np.random.default_rng(4),
            lr=3e-3, warmup_steps=10,
        )
        assert history[-1].val_accuracy >= 0.95

    def test_frozen_encoder_head_loss_convex_decreasing(self, labeled):
        """With the encoder frozen this is full-batch logistic regression:
        the loss must decrease every epoch at a small enough step size."""
        vocab, docs, config = labeled
        model = EncoderModel(config, np.random.default_rng(1))
        model, history = fine_tune_classifier(
            model, docs, num_labels=2, epochs=15, rng=np.random.default_rng(6),
            lr=0.02, warmup_steps=0, freeze_encoder=True, val_fraction=0.0,
        )
        losses = [h.loss for h in history]
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestPersistence:
    def test_checkpoint_round_trip(self, small_setup, tmp_path):
        vocab, docs, config, model = small_setup
        path = tmp_path / "encoder.ckpt"
        model.save(path)
        loaded = EncoderModel.load(path)
        np.testing.assert_array_equal(model.embed(docs[0].ids), loaded.embed(docs[0].ids))
        assert loaded.parameter_hash() == model.parameter_hash()

    def test_classifier_head_round_trips(self, small_setup, tmp_path):
        vocab, docs, config, _ = small_setup
        model = EncoderModel(config, np.random.default_rng(9))
        model.add_classifier(4, np.random.default_rng(10))
        path = tmp_path / "encoder.ckpt"
        model.save(path)
        loaded = EncoderModel.load(path)
        assert loaded.num_labels == 4
        np.testing.assert_array_equal(loaded.classify_ids(docs[0].ids),
                                      model.classify_ids(docs[0].ids))
