"""Mini decoder-only transformer with LoRA on the query/key projections.

Blocks are pre-norm: x + attn(LN(x)), then x + FFN(LN(x)); a final layer
norm produces the output sequence.  Attention is causal.  Projection
matrices are stored (d_in, d_out) so a layer computes ``x @ W``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint as ckpt
from . import rng as rngmod
from .errors import CheckpointError, ConfigError, LengthError
from .instructions import PAD, VOCAB, Vocab, tokenize
from .layers import normal_param, param, set_trainable
from .numerics import Adam, Tensor, cross_entropy, gelu, layer_norm, matmul, softmax_rows

log = logging.getLogger(__name__)

# reference dimensions of the full-size system, kept for documentation
REFERENCE_D_MODEL = 4096
REFERENCE_LORA_RANK = 8
REFERENCE_ENCODER_WIDTH = 128

LN_EPS = 1e-5


@dataclass(frozen=True)
class BackboneConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 64
    max_len: int = 8

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    def to_dict(self):
        return asdict(self)


class LoraAdapter:
    """Low-rank update A @ B for a frozen (a x b) matrix; B starts at zero."""

    def __init__(self, a: int, b: int, rank: int, gen: np.random.Generator, dtype=np.float32, scale: float = 1.0,
                 name: str = "lora"):
        if not 0 < rank < min(a, b):
            raise ConfigError(f"LoRA rank {rank} must be in (0, min({a}, {b}))")
        self.rank = rank
        self.scale = scale
        self.A = normal_param(gen, (a, rank), 0.02, dtype, f"{name}.A")
        self.B = param(np.zeros((rank, b)), dtype, f"{name}.B")

    def parameters(self) -> list[Tensor]:
        return [self.A, self.B]


def apply_lora(w0: Tensor, lora: LoraAdapter | None) -> Tensor:
    """Effective weight W0 + scale * A @ B.  W0 is only read."""
    if lora is None:
        return w0
    a, b = w0.shape
    if lora.A.shape[0] != a or lora.B.shape[1] != b:
        raise ConfigError(f"LoRA shapes {lora.A.shape}/{lora.B.shape} do not fit weight {w0.shape}")
    delta = matmul(lora.A, lora.B)
    if lora.scale != 1.0:
        delta = delta * lora.scale
    return w0 + delta


class LoraSet:
    """One adapter for Wq and one for Wk in every layer."""

    def __init__(self, cfg: BackboneConfig, rank: int, gen: np.random.Generator, dtype=np.float32, name="lora"):
        d = cfg.d_model
        self.rank = rank
        self.layers = [
            {t: LoraAdapter(d, d, rank, gen, dtype, name=f"{name}.{i}.{t}") for t in ("wq", "wk")}
            for i in range(cfg.n_layers)
        ]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for t in ("wq", "wk") for p in layer[t].parameters()]

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]


class Backbone:
    def __init__(self, cfg: BackboneConfig, gen: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        d, f = cfg.d_model, cfg.d_ff
        std_out = 0.02 / math.sqrt(2 * cfg.n_layers)
        self.tok_emb = normal_param(gen, (cfg.vocab_size, d), 0.02, dtype, "tok_emb")
        self.pos_emb = normal_param(gen, (cfg.max_len, d), 0.02, dtype, "pos_emb")
        self.blocks = []
        for i in range(cfg.n_layers):
            self.blocks.append({
                "ln1_g": param(np.ones(d), dtype, f"b{i}.ln1_g"),
                "ln1_b": param(np.zeros(d), dtype, f"b{i}.ln1_b"),
                "wq": normal_param(gen, (d, d), 0.02, dtype, f"b{i}.wq"),
                "wk": normal_param(gen, (d, d), 0.02, dtype, f"b{i}.wk"),
                "wv": normal_param(gen, (d, d), 0.02, dtype, f"b{i}.wv"),
                "wo": normal_param(gen, (d, d), std_out, dtype, f"b{i}.wo"),
                "ln2_g": param(np.ones(d), dtype, f"b{i}.ln2_g"),
                "ln2_b": param(np.zeros(d), dtype, f"b{i}.ln2_b"),
                "w1": normal_param(gen, (d, f), 0.02, dtype, f"b{i}.w1"),
                "b1": param(np.zeros(f), dtype, f"b{i}.b1"),
                "w2": normal_param(gen, (f, d), std_out, dtype, f"b{i}.w2"),
                "b2": param(np.zeros(d), dtype, f"b{i}.b2"),
            })
        self.lnf_g = param(np.ones(d), dtype, "lnf_g")
        self.lnf_b = param(np.zeros(d), dtype, "lnf_b")
        self.calls = 0

    @property
    def dtype(self):
        return self.tok_emb.dtype

    def parameters(self) -> list[Tensor]:
        out = [self.tok_emb, self.pos_emb]
        for blk in self.blocks:
            out.extend(blk.values())
        out.extend([self.lnf_g, self.lnf_b])
        return out

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def freeze(self):
        set_trainable(self.parameters(), False)

    # -- forward ------------------------------------------------------------
    def attention(self, i: int, x: Tensor, lora: LoraSet | None = None) -> Tensor:
        """Causal multi-head self-attention of block ``i`` on an already-normalised (B, S, d) input."""
        blk = self.blocks[i]
        B, S, d = x.shape
        H = self.cfg.n_heads
        dh = d // H
        ad = lora.layers[i] if lora is not None else {}
        wq = apply_lora(blk["wq"], ad.get("wq"))
        wk = apply_lora(blk["wk"], ad.get("wk"))
        split = lambda t: t.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        q, k, v = split(matmul(x, wq)), split(matmul(x, wk)), split(matmul(x, blk["wv"]))
        scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        if S > 1:
            mask = np.triu(np.full((S, S), -1e9, dtype=x.dtype), k=1)
            scores = scores + mask
        att = softmax_rows(scores)
        ctx = matmul(att, v).transpose(0, 2, 1, 3).reshape(B, S, d)
        return matmul(ctx, blk["wo"])

    def block(self, i: int, x: Tensor, lora: LoraSet | None = None) -> Tensor:
        blk = self.blocks[i]
        x = x + self.attention(i, layer_norm(x, blk["ln1_g"], blk["ln1_b"], LN_EPS), lora)
        h = layer_norm(x, blk["ln2_g"], blk["ln2_b"], LN_EPS)
        h = matmul(gelu(matmul(h, blk["w1"]) + blk["b1"]), blk["w2"]) + blk["b2"]
        return x + h

    def encode(self, tokens: Tensor, lora: LoraSet | None = None) -> Tensor:
        """(B, S, d) token embeddings -> (B, S, d) output sequence (positional embeddings added here)."""
        if tokens.ndim != 3 or tokens.shape[-1] != self.cfg.d_model:
            raise ConfigError(f"expected (batch, seq, {self.cfg.d_model}) tokens, got {tokens.shape}")
        S = tokens.shape[1]
        if S > self.cfg.max_len:
            raise LengthError(f"sequence length {S} exceeds max_len {self.cfg.max_len}")
        self.calls += 1
        x = tokens + self.pos_emb[:S]
        for i in range(self.cfg.n_layers):
            x = self.block(i, x, lora)
        return layer_norm(x, self.lnf_g, self.lnf_b, LN_EPS)

    def forward(self, tokens: Tensor, lora: LoraSet | None = None) -> Tensor:
        """Single pass; returns the output vector at the last position, shape (B, d)."""
        return self.encode(tokens, lora)[:, -1, :]

    def embed(self, ids: np.ndarray) -> Tensor:
        return self.tok_emb[np.asarray(ids)]

    def lm_logits(self, ids: np.ndarray) -> Tensor:
        """Next-token logits with the output projection tied to the token embeddings."""
        h = self.encode(self.embed(ids))
        return matmul(h, self.tok_emb.T)


# -- synthetic pretraining corpus -------------------------------------------

_KEYWORDS = ("position", "LOS status", "precoding", "beam selection", "path loss", "user information")
_FILLER = ("signal", "antenna", "power", "angle", "delay", "area", "building", "strong", "weak", "high", "low",
           "gain", "array", "matrix", "vector", "index", "value", "best", "optimal", "link", "downlink",
           "uplink", "carrier", "noise", "street", "cell", "rate", "frequency", "base", "station")
_VERBS = ("infer", "predict", "estimate", "report")


def corpus_sentence(gen: np.random.Generator, vocab: Vocab = VOCAB, length: int = 8) -> list[int]:
    """One templated sentence of ``length`` word ids.

    Three templates.  An instruction: a leading content word, an optional
    "please <verb> the", the two keyword slots exactly as the downstream
    instruction lays them out, then the leading word again; the word after
    the keyword therefore depends on what came first, not on the keyword.
    A copy pattern that repeats its first three words.  A description whose
    final word echoes the first.
    """
    kind = gen.integers(3)
    if kind == 0:
        lead = _FILLER[gen.integers(len(_FILLER))]
        ids = [vocab.id(lead)]
        if gen.integers(2):
            ids += [vocab.id(w) for w in ("please", _VERBS[gen.integers(len(_VERBS))], "the")]
        ids += tokenize(_KEYWORDS[gen.integers(len(_KEYWORDS))], vocab)
        ids.append(vocab.id(lead))
    else:
        if kind == 1:
            picks = [_FILLER[j] for j in gen.integers(len(_FILLER), size=3)]
            words = [*picks, "and", "then", *picks]
        else:
            a, b, c = (_FILLER[j] for j in gen.integers(len(_FILLER), size=3))
            words = [a, "is", "the", b, "of", "the", c, a]
        ids = [vocab.id(w) for w in words]
    ids = ids[:length]
    return ids + [vocab.id(PAD)] * (length - len(ids))


def corpus_batch(seed: int, step: int, batch: int, vocab: Vocab = VOCAB, length: int = 8) -> np.ndarray:
    gen = rngmod.stream(seed, step, rngmod.CORPUS)
    return np.array([corpus_sentence(gen, vocab, length) for _ in range(batch)])


def lm_loss(bb: Backbone, ids: np.ndarray) -> Tensor:
    logits = bb.lm_logits(ids[:, :-1])
    B, S, V = logits.shape
    return cross_entropy(logits.reshape(B * S, V), ids[:, 1:].reshape(-1))


def perplexity(bb: Backbone, ids: np.ndarray) -> float:
    return float(np.exp(lm_loss(bb, ids).data))


def init_backbone(seed: int, cfg: BackboneConfig | None = None, dtype=np.float32) -> Backbone:
    return Backbone(cfg or BackboneConfig(), rngmod.stream(seed, 0, rngmod.INIT), dtype)


def pretrain_lm(bb: Backbone, seed: int, steps: int, batch: int = 32, lr: float = 3e-3) -> dict:
    """Next-token training on the synthetic corpus; leaves the backbone frozen afterwards.

    Returns initial and final perplexity on a fixed held-out batch.
    """
    set_trainable(bb.parameters(), True)
    held_out = corpus_batch(seed + 1_000_003, 0, 256, length=bb.cfg.max_len)
    ppl0 = perplexity(bb, held_out)
    opt = Adam(bb.parameters(), lr=lr)
    for step in range(steps):
        ids = corpus_batch(seed, step, batch, length=bb.cfg.max_len)
        opt.zero_grad()
        loss = lm_loss(bb, ids)
        loss.backward()
        opt.step()
        if step % 200 == 0:
            log.info("pretrain step %d loss %.4f", step, float(loss.data))
    bb.freeze()
    ppl1 = perplexity(bb, held_out)
    log.info("pretraining perplexity %.3f -> %.3f", ppl0, ppl1)
    return {"initial_perplexity": ppl0, "final_perplexity": ppl1, "steps": steps}


def save_backbone(path, bb: Backbone, extra: dict | None = None) -> None:
    header = {"config": bb.cfg.to_dict(), "n_layers": bb.cfg.n_layers, "d_model": bb.cfg.d_model,
              "vocab_hash": VOCAB.digest()}
    header.update(extra or {})
    ckpt.save(path, ckpt.MAGIC_BACKBONE, header, [(p.name, p.data) for p in bb.parameters()])


def load_backbone(path, vocab: Vocab = VOCAB) -> tuple[Backbone, dict]:
    header, tensors = ckpt.load(path, ckpt.MAGIC_BACKBONE, stage="pretrain-lm")
    if header.get("vocab_hash") != vocab.digest():
        raise CheckpointError("backbone was pretrained with a different vocabulary")
    bb = Backbone(BackboneConfig(**header["config"]), rngmod.stream(0))
    ckpt.assign(bb.parameters(), tensors)
    bb.freeze()
    return bb, header
