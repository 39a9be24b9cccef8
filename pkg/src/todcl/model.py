"""Decoder-only causal transformer language model.

Pre-LN GPT-style blocks, learned positions, tied input/output embeddings.
An optional adapter set is applied to the output of every block.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .data.vocab import BOS_ID, EOS_ID, PAD_ID, Tokenizer

IGNORE = -100


class SequenceLengthError(ValueError):
    pass


@dataclass
class LmConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 256
    dropout: float = 0.0
    emb_std: float = 0.5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if min(self.vocab_size, self.d_model, self.n_layers, self.d_ff, self.max_seq_len) < 1:
            raise ValueError("LmConfig sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _layer_names(l: int) -> list[str]:
    p = f"h{l}."
    return [p + n for n in ("ln1.g", "ln1.b", "attn.wq", "attn.wk", "attn.wv", "attn.bq", "attn.bk",
                            "attn.bv", "attn.wo", "attn.bo", "ln2.g", "ln2.b",
                            "mlp.w_in", "mlp.b_in", "mlp.w_out", "mlp.b_out")]


def param_names(cfg: LmConfig) -> list[str]:
    """The flattening order of the parameter vector."""
    names = ["tok_emb", "pos_emb"]
    for l in range(cfg.n_layers):
        names += _layer_names(l)
    return names + ["ln_f.g", "ln_f.b"]


@dataclass
class EncodedPair:
    tokens: np.ndarray  # [BOS] X Y [EOS]
    n: int  # input length, BOS included
    m: int  # output length, EOS included
    include_input: bool = False

    @property
    def targets(self) -> np.ndarray:
        """Next-token targets for positions 0..len-2, ``IGNORE`` where not scored."""
        t = self.tokens[1:].copy()
        if not self.include_input:
            t[: self.n - 1] = IGNORE
        return t


def encode_pair(tokenizer: Tokenizer, x: str, y: str, include_input: bool = False,
                start_id: int = BOS_ID) -> EncodedPair:
    xs, ys = tokenizer.encode(x), tokenizer.encode(y)
    if not ys:
        raise ValueError("empty output sequence: mean loss is undefined")
    tokens = np.array([start_id] + xs + ys + [EOS_ID], dtype=np.int64)
    return EncodedPair(tokens, 1 + len(xs), len(ys) + 1, include_input)


def collate(pairs: Sequence[EncodedPair]):
    """Right-padded ``(inputs, targets)`` arrays for a batch of pairs."""
    width = max(len(p.tokens) for p in pairs) - 1
    inputs = np.full((len(pairs), width), PAD_ID, dtype=np.int64)
    targets = np.full((len(pairs), width), IGNORE, dtype=np.int64)
    for i, p in enumerate(pairs):
        k = len(p.tokens) - 1
        inputs[i, :k] = p.tokens[:-1]
        targets[i, :k] = p.targets
    return inputs, targets


@dataclass
class DecodeResult:
    tokens: list[int]
    truncated: bool


class TransformerLM:
    def __init__(self, config: LmConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d, f, L = config.d_model, config.d_ff, config.n_layers
        std, out_std = 0.02, 0.02 / np.sqrt(2 * L)
        shapes = {"tok_emb": (config.vocab_size, d), "pos_emb": (config.max_seq_len, d),
                  "ln_f.g": (d,), "ln_f.b": (d,)}
        for l in range(L):
            p = f"h{l}."
            shapes.update({p + "ln1.g": (d,), p + "ln1.b": (d,), p + "ln2.g": (d,), p + "ln2.b": (d,),
                           p + "attn.bq": (d,), p + "attn.bk": (d,), p + "attn.bv": (d,),
                           p + "attn.bo": (d,), p + "mlp.b_in": (f,), p + "mlp.b_out": (d,),
                           p + "attn.wq": (d, d), p + "attn.wk": (d, d), p + "attn.wv": (d, d),
                           p + "attn.wo": (d, d), p + "mlp.w_in": (d, f), p + "mlp.w_out": (f, d)})
        self.params: dict[str, Tensor] = {}
        for name in param_names(config):
            shape = shapes[name]
            if name.endswith(".g"):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                s = out_std if name.endswith(("wo", "w_out")) else std
                if name == "tok_emb":
                    # large enough that a frozen base can still emit confident logits
                    s = config.emb_std
                data = rng.normal(0.0, s, size=shape)
            self.params[name] = Tensor(data, requires_grad=True, name=name)
        self._masks: dict[int, np.ndarray] = {}

    # -- parameter views ---------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.params.values()])

    def set_flat(self, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.num_params():
            raise ValueError(f"expected {self.num_params()} values, got {vector.size}")
        i = 0
        for p in self.params.values():
            p.data = vector[i:i + p.size].reshape(p.shape).copy()
            i += p.size

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([(p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
                               for p in self.params.values()])

    def set_flat_grad(self, vector: np.ndarray) -> None:
        i = 0
        for p in self.params.values():
            p.grad = vector[i:i + p.size].reshape(p.shape).copy()
            i += p.size

    def fingerprint(self) -> str:
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    def freeze(self, frozen: bool = True) -> None:
        for p in self.params.values():
            p.requires_grad = not frozen
            if frozen:
                p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "TransformerLM":
        other = TransformerLM.__new__(TransformerLM)
        other.config = self.config
        other.params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)
                        for k, v in self.params.items()}
        other._masks = {}
        return other

    # -- forward -------------------------------------------------------------------
    def _causal(self, p: int) -> np.ndarray:
        mask = self._masks.get(p)
        if mask is None:
            mask = np.triu(np.ones((p, p), dtype=bool), k=1)
            self._masks[p] = mask
        return mask

    def _attention(self, x: Tensor, l: int) -> Tensor:
        P, cfg = self.params, self.config
        B, p, d = x.shape
        H = cfg.n_heads
        dh = d // H
        pre = f"h{l}.attn."

        def heads(t):
            return ag.transpose(ag.reshape(t, (B, p, H, dh)), (0, 2, 1, 3))

        q = heads(ag.linear(x, P[pre + "wq"], P[pre + "bq"]))
        k = heads(ag.linear(x, P[pre + "wk"], P[pre + "bk"]))
        v = heads(ag.linear(x, P[pre + "wv"], P[pre + "bv"]))
        scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        att = ag.softmax(ag.masked_fill(scores, self._causal(p), -np.inf))
        ctx = ag.reshape(ag.transpose(ag.matmul(att, v), (0, 2, 1, 3)), (B, p, d))
        return ag.linear(ctx, P[pre + "wo"], P[pre + "bo"])

    def forward(self, tokens, adapter=None, rng: np.random.Generator | None = None) -> Tensor:
        """Logits ``[B, p, V]`` (or ``[p, V]`` for a 1-D token array)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None, :]
        B, p = tokens.shape
        if p > self.config.max_seq_len:
            raise SequenceLengthError(f"sequence of {p} tokens exceeds max_seq_len={self.config.max_seq_len}")
        if p == 0:
            raise SequenceLengthError("empty token sequence")
        P, drop = self.params, self.config.dropout
        x = ag.embedding(P["tok_emb"], tokens) + ag.embedding(P["pos_emb"], np.arange(p))
        x = ag.dropout(x, drop, rng)
        for l in range(self.config.n_layers):
            pre = f"h{l}."
            h = ag.layer_norm(x, P[pre + "ln1.g"], P[pre + "ln1.b"])
            x = x + ag.dropout(self._attention(h, l), drop, rng)
            h = ag.layer_norm(x, P[pre + "ln2.g"], P[pre + "ln2.b"])
            h = ag.gelu(ag.linear(h, P[pre + "mlp.w_in"], P[pre + "mlp.b_in"]))
            x = x + ag.dropout(ag.linear(h, P[pre + "mlp.w_out"], P[pre + "mlp.b_out"]), drop, rng)
            if adapter is not None:
                x = adapter.forward(x, l)
        x = ag.layer_norm(x, P["ln_f.g"], P["ln_f.b"])
        logits = ag.linear(x, ag.transpose(P["tok_emb"]))
        return ag.reshape(logits, logits.shape[1:]) if squeeze else logits

    __call__ = forward

    def loss(self, pairs: Sequence[EncodedPair], adapter=None, rng=None) -> Tensor:
        """Mean NLL over the scored positions of a batch of pairs."""
        inputs, targets = collate(pairs)
        return ag.softmax_cross_entropy(self.forward(inputs, adapter, rng), targets, IGNORE)

    # -- scoring -------------------------------------------------------------------
    def token_nll(self, sequences: Sequence[Sequence[int]], adapter=None) -> list[np.ndarray]:
        """Per-position NLL of tokens 1.. of each sequence, batched with right padding."""
        seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
        width = max(len(s) for s in seqs) - 1
        inputs = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
        for i, s in enumerate(seqs):
            inputs[i, : len(s) - 1] = s[:-1]
        with no_grad():
            logp = ag.log_softmax_np(self.forward(inputs, adapter).data)
        return [-logp[i, np.arange(len(s) - 1), s[1:]] for i, s in enumerate(seqs)]

    def perplexity(self, tokens, adapter=None, exclude_ids=None) -> float:
        """``exp`` of the mean NLL of tokens[1:] given their prefixes."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size < 2:
            raise ValueError("perplexity needs at least two tokens (one predicted position)")
        nll = self.token_nll([tokens], adapter)[0]
        if exclude_ids:
            nll = nll[~np.isin(tokens[1:], list(exclude_ids))]
            if nll.size == 0:
                raise ValueError("every predicted position was excluded")
        return float(np.exp(nll.mean()))

    # -- generation ----------------------------------------------------------------
    def greedy_decode(self, prefix, adapter=None, max_new: int = 32, stop_token: int = EOS_ID) -> DecodeResult:
        return self.greedy_decode_batch([prefix], adapter, max_new, stop_token)[0]

    def greedy_decode_batch(self, prefixes, adapter=None, max_new: int = 32,
                            stop_token: int = EOS_ID, halt_after=()) -> list[DecodeResult]:
        """Greedy continuation of each prefix; the stop token is not returned.

        Tokens in ``halt_after`` are kept and end that row.  Greedy decoding is
        prefix-consistent, so this only skips work nobody will look at.
        """
        return self._generate(prefixes, adapter, max_new, stop_token, None, 0, frozenset(halt_after))

    def sample_batch(self, prefixes, rng: np.random.Generator, adapter=None, max_new: int = 32,
                     stop_token: int = EOS_ID, top_k: int = 20) -> list[DecodeResult]:
        return self._generate(prefixes, adapter, max_new, stop_token, rng, top_k)

    def _generate(self, prefixes, adapter, max_new, stop_token, rng, top_k, halt_after=frozenset()):
        seqs = [list(map(int, p)) for p in prefixes]
        if any(len(s) == 0 for s in seqs):
            raise ValueError("prefix must be non-empty")
        start = [len(s) for s in seqs]
        active = [True] * len(seqs)
        truncated = [max_new > 0 for _ in seqs]
        limit = self.config.max_seq_len
        for _ in range(max_new):
            idx = [i for i, a in enumerate(active) if a and len(seqs[i]) < limit]
            for i, a in enumerate(active):
                if a and len(seqs[i]) >= limit:
                    active[i] = False
            if not idx:
                break
            width = max(len(seqs[i]) for i in idx)
            batch = np.full((len(idx), width), PAD_ID, dtype=np.int64)
            for r, i in enumerate(idx):
                batch[r, : len(seqs[i])] = seqs[i]
            with no_grad():
                logits = self.forward(batch, adapter).data
            for r, i in enumerate(idx):
                z = logits[r, len(seqs[i]) - 1]
                if rng is None:
                    tok = int(np.argmax(z))
                else:
                    k = min(top_k, z.size) if top_k else z.size
                    top = np.argpartition(-z, k - 1)[:k]
                    pz = np.exp(z[top] - z[top].max())
                    tok = int(top[rng.choice(k, p=pz / pz.sum())])
                if tok == stop_token:
                    active[i] = False
                    truncated[i] = False
                else:
                    seqs[i].append(tok)
                    if tok in halt_after:
                        active[i] = False
                        truncated[i] = False
        return [DecodeResult(s[b:], t) for s, b, t in zip(seqs, start, truncated)]
