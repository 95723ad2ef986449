"""Bidirectional transformer encoder.

Three jobs: masked-token pretraining over a raw corpus, document embedding
(the hidden state of the leading [CLS] position after the last block), and
optional label-supervised fine-tuning through a softmax classifier head on
that embedding.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import EncoderBlock, LayerNorm, PredictionHead, INIT_STD
from .optim import AdamW
from .tensor import Tensor, cross_entropy, gather_rows, init_normal, matmul, no_grad, softmax
from .tensor import dropout as dropout_op
from .tokenizer import EncodedDocument, mask_for_mlm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """Shared shape configuration for the encoder and decoder."""

    hidden_size: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    ffn_size: int = 256
    max_len: int = 64
    vocab_size: int = 0
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be set before building a model")

    @classmethod
    def desk_scale(cls, vocab_size: int, max_len: int = 64, dropout: float = 0.1) -> "ModelConfig":
        return cls(64, 2, 4, 256, max_len, vocab_size, dropout)

    @classmethod
    def paper_scale(cls, vocab_size: int, max_len: int = 512, dropout: float = 0.1) -> "ModelConfig":
        return cls(768, 6, 12, 3072, max_len, vocab_size, dropout)


class EncoderModel:
    """Word+position embeddings, encoder blocks, masked-token head."""

    component = "encoder"

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.word_embedding = init_normal(rng, (config.vocab_size, config.hidden_size), INIT_STD, dtype)
        self.position_embedding = init_normal(rng, (config.max_len, config.hidden_size), INIT_STD, dtype)
        self.embed_norm = LayerNorm(config.hidden_size, dtype)
        self.blocks = [
            EncoderBlock(rng, config.hidden_size, config.num_heads, config.ffn_size, dtype)
            for _ in range(config.num_blocks)
        ]
        self.mlm_head = PredictionHead(rng, config.hidden_size, config.vocab_size, dtype)
        self.classifier: Tensor | None = None

    # -- structure ----------------------------------------------------------

    @property
    def num_labels(self) -> int:
        if self.classifier is None:
            raise ValueError("encoder has no classifier head")
        return self.classifier.shape[1]

    def add_classifier(self, num_labels: int, rng: np.random.Generator) -> None:
        if num_labels < 1:
            raise ValueError(f"need at least one label, got {num_labels}")
        self.classifier = init_normal(rng, (self.config.hidden_size, num_labels), INIT_STD, self.dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {
            "word_embedding": self.word_embedding,
            "position_embedding": self.position_embedding,
        }
        params.update(self.embed_norm.named_parameters("embed_norm"))
        for i, block in enumerate(self.blocks):
            params.update(block.named_parameters(f"block{i}"))
        params.update(self.mlm_head.named_parameters("mlm_head"))
        if self.classifier is not None:
            params["classifier.weight"] = self.classifier
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_hash(self) -> str:
        """SHA-256 over all parameter names and payloads."""
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters().items()):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()

    def save(self, path) -> None:
        extra = {}
        if self.classifier is not None:
            extra["num_labels"] = int(self.classifier.shape[1])
        save_checkpoint(
            path,
            component=self.component,
            config=asdict(self.config),
            tensors={n: p.data for n, p in self.named_parameters().items()},
            extra=extra,
        )

    @classmethod
    def load(cls, path) -> "EncoderModel":
        ckpt = load_checkpoint(path)
        if ckpt.component != cls.component:
            raise ValueError(f"{path} holds a {ckpt.component!r} checkpoint, expected {cls.component!r}")
        config = ModelConfig(**ckpt.config)
        model = cls(config, np.random.default_rng(0))
        if "num_labels" in ckpt.extra:
            model.add_classifier(int(ckpt.extra["num_labels"]), np.random.default_rng(0))
        params = model.named_parameters()
        if set(params) != set(ckpt.tensors):
            missing = set(params) ^ set(ckpt.tensors)
            raise ValueError(f"checkpoint tensor names do not match the model: {sorted(missing)}")
        for name, p in params.items():
            loaded = ckpt.tensors[name]
            if loaded.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {loaded.shape} vs {p.shape}")
            p.data = loaded.astype(model.dtype, copy=False)
        return model

    # -- forward ------------------------------------------------------------

    def forward(
        self,
        ids,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Return final hidden states [n, h] and the [CLS] embedding [h]."""
        ids = np.asarray(ids, dtype=np.intp)
        n = ids.shape[0]
        if n > self.config.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.config.max_len}")
        x = gather_rows(self.word_embedding, ids) + gather_rows(self.position_embedding, np.arange(n))
        x = self.embed_norm(x)
        rate = self.config.dropout if train else 0.0
        if rate:
            x = dropout_op(x, rate, rng)
        for block in self.blocks:
            x = block(x, dropout_rate=rate, train=train, rng=rng)
        cls_embedding = gather_rows(x, np.array([0])).reshape((self.config.hidden_size,))
        return x, cls_embedding

    def embed(self, ids) -> np.ndarray:
        """Deterministic document embedding (no graph, eval mode)."""
        with no_grad():
            _, cls_embedding = self.forward(ids, train=False)
        return cls_embedding.data.copy()

    def embed_documents(self, docs: list[EncodedDocument]) -> np.ndarray:
        return np.stack([self.embed(d.ids) for d in docs])

    def mlm_logits(self, hidden: Tensor, positions) -> Tensor:
        """Prediction-head logits restricted to the given positions."""
        return self.mlm_head(gather_rows(hidden, np.asarray(positions, dtype=np.intp)))

    def classify_ids(self, ids) -> np.ndarray:
        """Full label distribution for one encoded document."""
        if self.classifier is None:
            raise ValueError("classify requires a fine-tuned classifier head")
        with no_grad():
            _, cls_embedding = self.forward(ids, train=False)
            logits = matmul(cls_embedding.reshape((1, -1)), self.classifier)
            probs = softmax(logits, axis=-1)
        return probs.data[0].copy()


def classify(encoder: EncoderModel, doc: EncodedDocument) -> np.ndarray:
    return encoder.classify_ids(doc.ids)


# -- training ----------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


def _mlm_loss_for_doc(
    model: EncoderModel,
    doc: EncodedDocument,
    rate: float,
    rng: np.random.Generator,
    train: bool,
    bert_corruption: bool = False,
    vocab=None,
) -> tuple[Tensor, int, int]:
    """Mean masked-position loss plus (correct, total) prediction counts."""
    masked_ids, positions, originals = mask_for_mlm(
        doc, rate=rate, rng=rng, vocab=vocab, bert_corruption=bert_corruption
    )
    hidden, _ = model.forward(masked_ids, train=train, rng=rng)
    logits = model.mlm_logits(hidden, positions)
    loss = cross_entropy(logits, originals, reduction="mean")
    correct = int((logits.data.argmax(axis=1) == np.asarray(originals)).sum())
    return loss, correct, len(originals)


def evaluate_mlm(
    model: EncoderModel,
    docs: list[EncodedDocument],
    rng: np.random.Generator,
    mask_rate: float = 0.15,
) -> tuple[float, float]:
    """Masked-token loss and accuracy under eval-mode forwards."""
    total_loss = 0.0
    correct = 0
    total = 0
    with no_grad():
        for doc in docs:
            loss, c, t = _mlm_loss_for_doc(model, doc, mask_rate, rng, train=False)
            total_loss += loss.item() * t
            correct += c
            total += t
    return total_loss / max(total, 1), correct / max(total, 1)


def pretrain_mlm(
    corpus: list[EncodedDocument],
    config: ModelConfig,
    epochs: int,
    rng: np.random.Generator,
    lr: float = 1e-3,
    weight_decay: float = 0.01,
    warmup_steps: int = 100,
    batch_size: int = 8,
    mask_rate: float = 0.15,
    bert_corruption: bool = False,
    vocab=None,
    val_docs: list[EncodedDocument] | None = None,
    model: EncoderModel | None = None,
) -> tuple[EncoderModel, list[EpochStats]]:
    """Train an encoder to recover masked tokens; returns per-epoch stats.

    The loss is the mean negative log-probability of the original token at
    each masked position; unmasked positions contribute nothing.
    """
    if not corpus:
        raise ValueError("cannot pretrain on an empty corpus")
    if model is None:
        model = EncoderModel(config, rng)
    optimizer = AdamW(
        model.parameters(), lr=lr, weight_decay=weight_decay, warmup_steps=warmup_steps
    )
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(corpus))
        epoch_loss = 0.0
        correct = 0
        total = 0
        pending = 0
        for j, doc_index in enumerate(order):
            doc = corpus[doc_index]
            loss, c, t = _mlm_loss_for_doc(
                model, doc, mask_rate, rng, train=True,
                bert_corruption=bert_corruption, vocab=vocab,
            )
            (loss * (1.0 / batch_size)).backward()
            pending += 1
            epoch_loss += loss.item()
            correct += c
            total += t
            if pending == batch_size or j == len(order) - 1:
                optimizer.step()
                pending = 0
        stats = EpochStats(
            epoch=epoch,
            loss=epoch_loss / len(corpus),
            accuracy=correct / max(total, 1),
        )
        if val_docs:
            eval_rng = np.random.default_rng([7, epoch])
            stats.val_loss, stats.val_accuracy = evaluate_mlm(model, val_docs, eval_rng, mask_rate)
        history.append(stats)
        log.info(
            "mlm epoch %d: loss %.4f acc %.3f%s",
            epoch, stats.loss, stats.accuracy,
            f" val_loss {stats.val_loss:.4f} val_acc {stats.val_accuracy:.3f}" if val_docs else "",
        )
    return model, history


def evaluate_classifier(model: EncoderModel, docs: list[EncodedDocument]) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    with no_grad():
        for doc in docs:
            _, emb = model.forward(doc.ids, train=False)
            logits = matmul(emb.reshape((1, -1)), model.classifier)
            loss = cross_entropy(logits, [doc.label], reduction="sum")
            total_loss += loss.item()
            correct += int(logits.data[0].argmax() == doc.label)
    return total_loss / len(docs), correct / len(docs)


def fine_tune_classifier(
    model: EncoderModel,
    docs: list[EncodedDocument],
    num_labels: int,
    epochs: int,
    rng: np.random.Generator,
    lr: float = 1e-3,
    weight_decay: float = 0.01,
    warmup_steps: int = 20,
    batch_size: int = 8,
    val_docs: list[EncodedDocument] | None = None,
    val_fraction: float = 0.1,
    freeze_encoder: bool = False,
    schedule: str = "linear_decay",
) -> tuple[EncoderModel, list[EpochStats]]:
    """Fit the label classifier on [CLS] embeddings, jointly with the encoder
    unless ``freeze_encoder``; the best validation snapshot is kept.

    With a frozen encoder the embeddings are computed once and the head is
    fitted as plain logistic regression: one full-batch gradient-descent step
    per epoch, so the (convex) loss decreases monotonically for small lr.
    """
    for doc in docs:
        if doc.label is None:
            raise ValueError(f"document {doc.doc_id!r} has no label")
    if model.classifier is None:
        model.add_classifier(num_labels, rng)
    if val_docs is None and val_fraction > 0 and len(docs) > 1:
        split = max(1, int(len(docs) * val_fraction))
        order = rng.permutation(len(docs))
        val_docs = [docs[i] for i in order[:split]]
        train_docs = [docs[i] for i in order[split:]]
    else:
        train_docs = list(docs)
    if freeze_encoder:
        frozen_embeddings = Tensor(model.embed_documents(train_docs))
        frozen_labels = [d.label for d in train_docs]
        optimizer = None
    else:
        # the masked-token head is off the classification path and gets no grads
        trainable = [p for n, p in model.named_parameters().items()
                     if not n.startswith("mlm_head.")]
        total_steps = None
        if schedule == "linear_decay":
            steps_per_epoch = -(-len(train_docs) // batch_size)
            total_steps = max(epochs * steps_per_epoch, warmup_steps + 1)
        optimizer = AdamW(
            trainable, lr=lr, weight_decay=weight_decay, warmup_steps=warmup_steps,
            schedule=schedule, total_steps=total_steps,
        )
    history: list[EpochStats] = []
    best_loss = float("inf")
    best_params: dict[str, np.ndarray] | None = None
    for epoch in range(1, epochs + 1):
        if freeze_encoder:
            logits = matmul(frozen_embeddings, model.classifier)
            loss = cross_entropy(logits, frozen_labels, reduction="mean")
            loss.backward()
            head = model.classifier
            head.data -= (lr * head.grad).astype(head.data.dtype, copy=False)
            head.zero_grad()
            epoch_loss = loss.item()
            correct = int((logits.data.argmax(axis=1) == np.asarray(frozen_labels)).sum())
            total = len(frozen_labels)
        else:
            order = rng.permutation(len(train_docs))
            epoch_loss = 0.0
            correct = 0
            total = 0
            pending = 0
            for j, doc_index in enumerate(order):
                doc = train_docs[doc_index]
                _, emb = model.forward(doc.ids, train=True, rng=rng)
                logits = matmul(emb.reshape((1, -1)), model.classifier)
                loss = cross_entropy(logits, [doc.label], reduction="sum")
                (loss * (1.0 / batch_size)).backward()
                pending += 1
                epoch_loss += loss.item()
                correct += int(logits.data[0].argmax() == doc.label)
                total += 1
                if pending == batch_size or j == len(order) - 1:
                    optimizer.step()
                    pending = 0
            epoch_loss /= len(train_docs)
        stats = EpochStats(epoch=epoch, loss=epoch_loss, accuracy=correct / max(total, 1))
        if val_docs:
            stats.val_loss, stats.val_accuracy = evaluate_classifier(model, val_docs)
            if stats.val_loss < best_loss:
                best_loss = stats.val_loss
                best_params = {n: p.data.copy() for n, p in model.named_parameters().items()}
        history.append(stats)
        log.info(
            "classifier epoch %d: loss %.4f acc %.3f%s",
            epoch, stats.loss, stats.accuracy,
            f" val_loss {stats.val_loss:.4f} val_acc {stats.val_accuracy:.3f}" if val_docs else "",
        )
    if best_params is not None:
        for n, p in model.named_parameters().items():
            p.data = best_params[n]
    return model, history
