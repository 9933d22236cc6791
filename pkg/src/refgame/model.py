"""Baseline grounded-dialogue model: entity encoder, dialogue GRU, shared
entity attention, and up to three decoders (TSEL target selection, REF
per-entity reference resolution, DIAL next-token generation), trained
jointly with manual backpropagation over the neural kernel.

Serialization convention: each message becomes a speaker-prefix token
("YOU:" from the encoding player's perspective, "THEM:" otherwise), the
message tokens, then "<eou>"; each selection event becomes the prefix,
"<selection>", "<eou>".  Every dialogue yields two training examples, one
per player perspective.  The DIAL loss covers both speakers' tokens
including the control tokens but never the speaker prefixes (the protocol
supplies those).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import AnnotatedCorpus, Dialogue, GoldEntry, Message, Split
from .errors import DivergenceError, SchemaError
from .io import atomic_write_text
from .neural import (
    Adam,
    ParamStore,
    bce_with_logits,
    cross_entropy,
    cross_entropy_rows,
    dropout_mask,
    gru_cell,
    gru_sequence,
    gru_sequence_backward,
    linear,
    sigmoid,
    softmax,
    softmax_backward,
    tanh,
)
from .scenario import VIEW_SIZE, view_feature_matrix

UNK = "<unk>"
YOU = "YOU:"
THEM = "THEM:"
EOU = "<eou>"
SEL = "<selection>"
SPECIALS = (UNK, YOU, THEM, EOU, SEL)

VARIANTS = ("TSEL", "REF", "TSEL-REF", "TSEL-DIAL", "TSEL-REF-DIAL")


def variant_heads(variant: str) -> frozenset[str]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return frozenset(p.lower() for p in variant.split("-"))


class Vocabulary:
    """Closed token vocabulary with reserved control tokens; unknown tokens
    map to a single <unk> id."""

    def __init__(self, tokens: Sequence[str]):
        for special in SPECIALS:
            if special in tokens:
                raise ValueError(f"reserved token {special!r} present in corpus tokens")
        self.tokens: tuple[str, ...] = SPECIALS + tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def decode(self, idx: int) -> str:
        return self.tokens[idx]

    @classmethod
    def from_corpus(cls, corpus: AnnotatedCorpus, dialogue_ids: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for did in dialogue_ids:
            for msg in corpus.dialogues[did].messages:
                seen.update(msg.tokens)
        return cls(sorted(seen))


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "TSEL-REF-DIAL"
    embed_dim: int = 256
    hidden_dim: int = 256
    attr_dim: int = 128
    rel_dim: int = 128
    attn_dim: int = 256
    mlp_dim: int = 256
    dropout: float = 0.5
    w_tsel: float = 1.0
    w_ref: float = 1.0
    w_dial: float = 1.0
    lr: float = 1e-3
    grad_clip: float = 0.5
    batch_size: int = 16
    epochs: int = 30
    patience: int = 4
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        variant_heads(self.variant)
        for name in ("embed_dim", "hidden_dim", "attr_dim", "rel_dim", "attn_dim", "mlp_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class StreamExample:
    """One dialogue serialized from one player's perspective."""

    dialogue_id: str
    perspective: str
    tokens: np.ndarray                 # (T,) int64 token ids
    dial_positions: np.ndarray         # (P,) positions with a DIAL target
    tsel_target: int                   # view-order index of own selection
    markable_ids: list[str]
    mark_positions: np.ndarray         # (M, 3) stream pos of start/last/eou
    ref_targets: np.ndarray            # (M, 7) gold bitset rows
    attrs: np.ndarray                  # (7, 4)
    rel: np.ndarray                    # (7, 6, 5)
    entity_ids: tuple[int, ...]        # world ids in view order


def serialize_dialogue(
    dialogue: Dialogue, perspective: str, vocab: Vocabulary
) -> tuple[np.ndarray, np.ndarray, dict[tuple[int, int], int], dict[int, int]]:
    """Token id stream plus DIAL target positions, a (utterance, token) ->
    stream position map, and per-utterance end-of-utterance positions."""
    ids: list[int] = []
    dial_pos: list[int] = []
    tok_pos: dict[tuple[int, int], int] = {}
    eou_pos: dict[int, int] = {}
    utt = -1
    for event in dialogue.events:
        prefix = YOU if event.speaker == perspective else THEM
        ids.append(vocab.encode(prefix))
        if isinstance(event, Message):
            utt += 1
            for t_idx, token in enumerate(event.tokens):
                tok_pos[(utt, t_idx)] = len(ids)
                dial_pos.append(len(ids))
                ids.append(vocab.encode(token))
            eou_pos[utt] = len(ids)
        else:
            dial_pos.append(len(ids))
            ids.append(vocab.encode(SEL))
        dial_pos.append(len(ids))
        ids.append(vocab.encode(EOU))
    return (
        np.asarray(ids, dtype=np.int64),
        np.asarray(dial_pos, dtype=np.int64),
        tok_pos,
        eou_pos,
    )


def build_examples(
    corpus: AnnotatedCorpus,
    dialogue_ids: Iterable[str],
    vocab: Vocabulary,
    gold: Mapping[str, GoldEntry],
) -> list[StreamExample]:
    """Two perspective examples per dialogue.  REF rows cover the
    perspective speaker's non-generic markables with usable gold (dropped
    markables are excluded)."""
    out = []
    for did in dialogue_ids:
        d = corpus.dialogues[did]
        scenario = corpus.scenarios[d.scenario_id]
        for perspective in ("A", "B"):
            tokens, dial_positions, tok_pos, eou_pos = serialize_dialogue(d, perspective, vocab)
            view = scenario.view(perspective)
            order = {eid: i for i, eid in enumerate(view.visible)}
            mark_ids: list[str] = []
            positions: list[tuple[int, int, int]] = []
            targets: list[np.ndarray] = []
            for mid in corpus.markables_by_dialogue.get(did, ()):
                m = corpus.markables[mid]
                if m.speaker != perspective or m.generic:
                    continue
                entry = gold.get(mid)
                if entry is None or entry.dropped:
                    continue
                row = np.zeros(VIEW_SIZE)
                for e in entry.referents:
                    row[order[e]] = 1.0
                mark_ids.append(mid)
                positions.append(
                    (
                        tok_pos[(m.utterance_index, m.start_token)],
                        tok_pos[(m.utterance_index, m.end_token - 1)],
                        eou_pos[m.utterance_index],
                    )
                )
                targets.append(row)
            attrs, rel = view_feature_matrix(scenario, perspective)
            out.append(
                StreamExample(
                    dialogue_id=did,
                    perspective=perspective,
                    tokens=tokens,
                    dial_positions=dial_positions,
                    tsel_target=order[d.selections[perspective]],
                    markable_ids=mark_ids,
                    mark_positions=(
                        np.asarray(positions, dtype=np.int64)
                        if positions
                        else np.zeros((0, 3), dtype=np.int64)
                    ),
                    ref_targets=(np.stack(targets) if targets else np.zeros((0, VIEW_SIZE))),
                    attrs=attrs,
                    rel=rel,
                    entity_ids=view.visible,
                )
            )
    return out


class GroundingModel:
    """Parameters plus forward/backward for all decoder combinations."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, store: ParamStore | None = None):
        self.config = config
        self.vocab = vocab
        self.heads = variant_heads(config.variant)
        dt = np.dtype(config.dtype)
        if store is None:
            store = ParamStore(seed=config.seed, dtype=dt)
            c = config
            de = c.attr_dim + c.rel_dim
            store.add("emb", (len(vocab), c.embed_dim))
            store.add("gru.W", (3 * c.hidden_dim, c.embed_dim))
            store.add("gru.U", (3 * c.hidden_dim, c.hidden_dim))
            store.add("gru.b", (3 * c.hidden_dim,), init="zeros")
            store.add("enc_attr.W", (c.attr_dim, 4))
            store.add("enc_attr.b", (c.attr_dim,), init="zeros")
            store.add("enc_rel.W", (c.rel_dim, 5))
            store.add("enc_rel.b", (c.rel_dim,), init="zeros")
            store.add("attn.We", (c.attn_dim, de))
            store.add("attn.Wq", (c.attn_dim, c.hidden_dim))
            store.add("attn.b", (c.attn_dim,), init="zeros")
            for head in ("tsel", "ref", "dial"):
                if head in self.heads:
                    store.add(f"attn.v_{head}", (c.attn_dim,), init="uniform")
            if "dial" in self.heads:
                store.add("dial.W1", (c.mlp_dim, c.hidden_dim + de))
                store.add("dial.b1", (c.mlp_dim,), init="zeros")
                store.add("dial.W2", (len(vocab), c.mlp_dim))
                store.add("dial.b2", (len(vocab),), init="zeros")
        self.store = store

    # --- building blocks ---------------------------------------------------

    def _encode_entities(self, attrs: np.ndarray, rel: np.ndarray):
        p = self.store
        attr_emb = tanh(linear(attrs, p["enc_attr.W"], p["enc_attr.b"]))
        rel_tanh = tanh(linear(rel, p["enc_rel.W"], p["enc_rel.b"]))
        entities = np.concatenate([attr_emb, rel_tanh.sum(axis=1)], axis=1)
        return entities, (attr_emb, rel_tanh)

    def _encode_entities_backward(self, attrs, rel, cache, d_entities) -> None:
        attr_emb, rel_tanh = cache
        g = self.store.grads
        da = d_entities[:, : self.config.attr_dim] * (1.0 - attr_emb * attr_emb)
        g["enc_attr.W"] += da.T @ attrs
        g["enc_attr.b"] += da.sum(axis=0)
        dr = d_entities[:, None, self.config.attr_dim:] * (1.0 - rel_tanh * rel_tanh)
        g["enc_rel.W"] += np.einsum("ijd,ijf->df", dr, rel)
        g["enc_rel.b"] += dr.sum(axis=(0, 1))

    def _attention(self, entities_proj: np.ndarray, queries: np.ndarray, head: str):
        """Scores for each of the 7 entities against each query row:
        score[q, i] = v_head . tanh(We e_i + Wq h_q + b)."""
        p = self.store
        q_proj = queries @ p["attn.Wq"].T
        act = tanh(entities_proj[None, :, :] + q_proj[:, None, :] + p["attn.b"])
        return act @ p[f"attn.v_{head}"], act

    def _attention_backward(self, dscores, act, entities, queries, head: str):
        """Returns (d_entities, d_queries); accumulates parameter grads."""
        p, g = self.store, self.store.grads
        v = p[f"attn.v_{head}"]
        g[f"attn.v_{head}"] += np.einsum("qi,qid->d", dscores, act)
        dact = dscores[:, :, None] * v[None, None, :] * (1.0 - act * act)
        g["attn.We"] += np.einsum("qid,ie->de", dact, entities)
        g["attn.Wq"] += np.einsum("qid,qh->dh", dact, queries)
        g["attn.b"] += dact.sum(axis=(0, 1))
        d_entities = np.einsum("qid,de->ie", dact, p["attn.We"])
        d_queries = np.einsum("qid,dh->qh", dact, p["attn.Wq"])
        return d_entities, d_queries

    # --- joint forward/backward over one example ----------------------------

    def run_example(
        self,
        ex: StreamExample,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
        backward: bool = False,
    ) -> dict[str, float]:
        """Compute the active-head losses; when ``backward`` is set the
        parameter gradients are accumulated into the store."""
        p, g = self.store, self.store.grads
        cfg = self.config
        entities, enc_cache = self._encode_entities(ex.attrs, ex.rel)
        entities_proj = entities @ p["attn.We"].T
        x = p["emb"][ex.tokens]
        h_seq, gru_cache = gru_sequence(p["gru.W"], p["gru.U"], p["gru.b"], x)
        if train and cfg.dropout > 0.0:
            if rng is None:
                raise ValueError("training forward needs an rng for dropout")
            mask = dropout_mask(rng, h_seq.shape, cfg.dropout, dtype=h_seq.dtype)
            hd = h_seq * mask
        else:
            mask = None
            hd = h_seq

        losses: dict[str, float] = {}
        d_hd = np.zeros_like(hd) if backward else None
        d_entities = np.zeros_like(entities) if backward else None

        if "tsel" in self.heads:
            q = hd[-1][None, :]
            scores, act = self._attention(entities_proj, q, "tsel")
            loss, dscores = cross_entropy(scores[0], ex.tsel_target)
            losses["tsel"] = loss
            if backward:
                de, dq = self._attention_backward(
                    cfg.w_tsel * dscores[None, :], act, entities, q, "tsel"
                )
                d_entities += de
                d_hd[-1] += dq[0]

        if "ref" in self.heads and len(ex.markable_ids) > 0:
            pos = ex.mark_positions
            queries = (hd[pos[:, 0]] + hd[pos[:, 1]] + hd[pos[:, 2]]) / 3.0
            scores, act = self._attention(entities_proj, queries, "ref")
            loss, dscores = bce_with_logits(scores, ex.ref_targets)
            losses["ref"] = loss
            if backward:
                de, dq = self._attention_backward(
                    cfg.w_ref * dscores, act, entities, queries, "ref"
                )
                d_entities += de
                for col in range(3):
                    np.add.at(d_hd, pos[:, col], dq / 3.0)
        elif "ref" in self.heads:
            losses["ref"] = 0.0

        if "dial" in self.heads:
            pos = ex.dial_positions
            h_in = hd[pos - 1]
            scores, act = self._attention(entities_proj, h_in, "dial")
            alpha = softmax(scores, axis=-1)
            context = alpha @ entities
            z = np.concatenate([h_in, context], axis=1)
            u1 = tanh(linear(z, p["dial.W1"], p["dial.b1"]))
            logits = linear(u1, p["dial.W2"], p["dial.b2"])
            loss, dlogits = cross_entropy_rows(logits, ex.tokens[pos])
            losses["dial"] = loss
            if backward:
                dlogits = cfg.w_dial * dlogits
                g["dial.W2"] += dlogits.T @ u1
                g["dial.b2"] += dlogits.sum(axis=0)
                du1 = (dlogits @ p["dial.W2"]) * (1.0 - u1 * u1)
                g["dial.W1"] += du1.T @ z
                g["dial.b1"] += du1.sum(axis=0)
                dz = du1 @ p["dial.W1"]
                d_hin = dz[:, : cfg.hidden_dim].copy()
                d_context = dz[:, cfg.hidden_dim:]
                d_entities += alpha.T @ d_context
                dalpha = d_context @ entities.T
                dscores = softmax_backward(dalpha, alpha, axis=-1)
                de, dq = self._attention_backward(dscores, act, entities, h_in, "dial")
                d_entities += de
                d_hin += dq
                np.add.at(d_hd, pos - 1, d_hin)

        total = sum(
            getattr(cfg, f"w_{head}") * value for head, value in losses.items()
        )
        losses["total"] = total
        if not np.isfinite(total):
            raise DivergenceError(
                f"non-finite loss on dialogue {ex.dialogue_id} ({ex.perspective}): {losses}"
            )
        if backward:
            d_h = d_hd * mask if mask is not None else d_hd
            dx, gru_grads, _ = gru_sequence_backward(p["gru.W"], p["gru.U"], gru_cache, d_h)
            g["gru.W"] += gru_grads["W"]
            g["gru.U"] += gru_grads["U"]
            g["gru.b"] += gru_grads["b"]
            np.add.at(g["emb"], ex.tokens, dx)
            self._encode_entities_backward(ex.attrs, ex.rel, enc_cache, d_entities)
        return losses

    # --- inference -----------------------------------------------------------

    def encode_states(self, ex: StreamExample) -> np.ndarray:
        x = self.store["emb"][ex.tokens]
        h_seq, _ = gru_sequence(self.store["gru.W"], self.store["gru.U"], self.store["gru.b"], x)
        return h_seq

    def tsel_probs(self, ex: StreamExample, h_seq: np.ndarray | None = None) -> np.ndarray:
        if "tsel" not in self.heads:
            raise ValueError(f"variant {self.config.variant} has no TSEL head")
        if h_seq is None:
            h_seq = self.encode_states(ex)
        entities, _ = self._encode_entities(ex.attrs, ex.rel)
        scores, _ = self._attention(entities @ self.store["attn.We"].T, h_seq[-1][None, :], "tsel")
        return softmax(scores[0])

    def ref_probs(self, ex: StreamExample, h_seq: np.ndarray | None = None) -> np.ndarray:
        """(M, 7) inclusion probabilities for the example's markables."""
        if "ref" not in self.heads:
            raise ValueError(f"variant {self.config.variant} has no REF head")
        if h_seq is None:
            h_seq = self.encode_states(ex)
        if len(ex.markable_ids) == 0:
            return np.zeros((0, VIEW_SIZE))
        entities, _ = self._encode_entities(ex.attrs, ex.rel)
        pos = ex.mark_positions
        queries = (h_seq[pos[:, 0]] + h_seq[pos[:, 1]] + h_seq[pos[:, 2]]) / 3.0
        scores, _ = self._attention(entities @ self.store["attn.We"].T, queries, "ref")
        return sigmoid(scores)

    def ref_probs_at(self, entities: np.ndarray, h_seq: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """REF probabilities for arbitrary (start, last, eou) stream positions."""
        queries = (h_seq[positions[:, 0]] + h_seq[positions[:, 1]] + h_seq[positions[:, 2]]) / 3.0
        scores, _ = self._attention(entities @ self.store["attn.We"].T, queries, "ref")
        return sigmoid(scores)

    # --- incremental decoding (selfplay) --------------------------------------

    def start_state(self, attrs: np.ndarray, rel: np.ndarray) -> "DecoderState":
        entities, _ = self._encode_entities(attrs, rel)
        return DecoderState(
            model=self,
            entities=entities,
            entities_proj=entities @ self.store["attn.We"].T,
            h=np.zeros(self.config.hidden_dim, dtype=self.store.dtype),
        )

    def save(self, prefix, history: list[dict] | None = None) -> None:
        prefix = Path(prefix)
        self.store.save(prefix.with_suffix(".params.json"))
        meta = {
            "format": "refgame-model",
            "version": 1,
            "config": asdict(self.config),
            "vocab": list(self.vocab.tokens[len(SPECIALS):]),
            "history": history or [],
        }
        atomic_write_text(prefix.with_suffix(".meta.json"), json.dumps(meta))

    @classmethod
    def load(cls, prefix) -> "GroundingModel":
        prefix = Path(prefix)
        with open(prefix.with_suffix(".meta.json"), encoding="utf-8") as f:
            meta = json.load(f)
        if meta.get("format") != "refgame-model":
            raise SchemaError(f"{prefix}: not a model checkpoint")
        config = ModelConfig(**meta["config"])
        vocab = Vocabulary(meta["vocab"])
        store = ParamStore.load(prefix.with_suffix(".params.json"))
        return cls(config, vocab, store=store)


@dataclass
class DecoderState:
    """Incremental GRU state over one agent's token stream."""

    model: GroundingModel
    entities: np.ndarray
    entities_proj: np.ndarray
    h: np.ndarray

    def feed(self, token_id: int) -> None:
        p = self.model.store
        x = p["emb"][token_id]
        self.h = gru_cell(p["gru.W"], p["gru.U"], p["gru.b"], x, self.h)

    def next_token_probs(self) -> np.ndarray:
        p = self.model.store
        scores, _ = self.model._attention(self.entities_proj, self.h[None, :], "dial")
        alpha = softmax(scores, axis=-1)
        context = alpha @ self.entities
        z = np.concatenate([self.h[None, :], context], axis=1)
        u1 = tanh(linear(z, p["dial.W1"], p["dial.b1"]))
        logits = linear(u1, p["dial.W2"], p["dial.b2"])
        return softmax(logits[0])

    def tsel_probs(self) -> np.ndarray:
        scores, _ = self.model._attention(self.entities_proj, self.h[None, :], "tsel")
        return softmax(scores[0])


# --- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    model: GroundingModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _mean_losses(model: GroundingModel, examples: Sequence[StreamExample]) -> dict[str, float]:
    sums: dict[str, float] = {}
    for ex in examples:
        for k, v in model.run_example(ex).items():
            sums[k] = sums.get(k, 0.0) + v
    return {k: v / len(examples) for k, v in sums.items()}


def train_model(
    config: ModelConfig,
    corpus: AnnotatedCorpus,
    split: Split,
    gold: Mapping[str, GoldEntry],
    *,
    log_path=None,
    quiet: bool = True,
) -> TrainResult:
    """Joint training with early stopping on validation loss.  Deterministic
    given config.seed (shuffling and dropout share one seeded rng)."""
    vocab = Vocabulary.from_corpus(corpus, split.train)
    train_ex = build_examples(corpus, split.train, vocab, gold)
    valid_ex = build_examples(corpus, split.valid, vocab, gold)
    model = GroundingModel(config, vocab)
    opt = Adam(model.store, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    best_val = float("inf")
    best_params: dict[str, np.ndarray] | None = None
    best_epoch = -1
    patience_left = config.patience
    history: list[dict] = []
    log_lines: list[str] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_ex))
        train_total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo: lo + config.batch_size]
            model.store.zero_grads()
            for i in batch:
                losses = model.run_example(train_ex[i], train=True, rng=rng, backward=True)
                train_total += losses["total"]
            model.store.scale_grads(1.0 / len(batch))
            model.store.clip_grad_global_norm(config.grad_clip)
            opt.step()
        valid = _mean_losses(model, valid_ex)
        record = {
            "epoch": epoch,
            "train_loss": train_total / len(train_ex),
            "valid_loss": valid["total"],
            **{f"valid_{k}": v for k, v in valid.items() if k != "total"},
            "seconds": round(time.perf_counter() - t0, 3),
        }
        history.append(record)
        log_lines.append(json.dumps(record))
        if not quiet:
            print(log_lines[-1])
        if valid["total"] < best_val:
            best_val = valid["total"]
            best_params = model.store.copy_values()
            best_epoch = epoch
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break
    if best_params is not None:
        model.store.load_values(best_params)
    if log_path is not None:
        atomic_write_text(log_path, "\n".join(log_lines) + "\n")
    return TrainResult(model=model, history=history, best_epoch=best_epoch)
