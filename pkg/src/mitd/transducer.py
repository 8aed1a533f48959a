"""Character-level GRU encoder-decoder with dot-product attention.

The network math is written once against an op namespace (``F``) so the
same code runs on taped :class:`~mitd.autodiff.Tensor` values for training
and on plain arrays for decoding.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import NumpyOps, TensorOps
from .corpus import BOS, EOS, PAD, EncodedSample, Vocabulary
from .model import ModelState, SequenceModel

log = logging.getLogger(__name__)

MAGIC = b"mitd1\n"


class DivergenceError(RuntimeError):
    pass


class ModelFileError(ValueError):
    pass


class ModelVersionError(ModelFileError):
    pass


class TruncatedModelError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    embed_dim: int = 64
    hidden_dim: int = 128
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    grad_clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.batch_size) < 1:
            raise ValueError("dimensions and batch size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    dev_accuracies: list[float] = field(default_factory=list)
    selected_epoch: int = 0
    wall_time: float = 0.0
    train_size: int = 0

    @property
    def best_dev_accuracy(self) -> float:
        return self.dev_accuracies[self.selected_epoch - 1] if self.selected_epoch else math.nan

    def dumps(self) -> str:
        lines = [
            f"train_size\t{self.train_size}",
            f"selected_epoch\t{self.selected_epoch}",
            f"best_dev_accuracy\t{self.best_dev_accuracy!r}",
            f"wall_time\t{self.wall_time:.3f}",
            "epoch\ttrain_loss\tdev_accuracy",
        ]
        lines += [f"{i}\t{l!r}\t{a!r}" for i, (l, a) in enumerate(zip(self.epoch_losses, self.dev_accuracies), 1)]
        return "\n".join(lines) + "\n"


# Parameters are an ordered dict of name -> float64 array. Weight matrices
# are stored (in, out); GRU input and recurrent matrices stack their gates
# along the output axis in the order update, reset, candidate.
Params = dict


def param_shapes(h: Hyperparameters, n_src: int, n_out: int) -> dict[str, tuple[int, ...]]:
    E, H = h.embed_dim, h.hidden_dim
    shapes = {"src_emb": (n_src, E), "tgt_emb": (n_out, E)}
    for prefix, n_in in (("enc_fwd_", E), ("enc_bwd_", E), ("dec_", E + 2 * H)):
        shapes.update({prefix + "W": (n_in, 3 * H), prefix + "U_zr": (H, 2 * H),
                       prefix + "U_h": (H, H), prefix + "b": (3 * H,)})
    shapes.update({"attn_W": (2 * H, H), "out_W": (3 * H, n_out), "out_b": (n_out,)})
    return shapes


def _gate_blocks(name: str) -> int:
    if name.endswith("_W") and name.startswith(("enc_", "dec_")):
        return 3
    if name.endswith("U_zr"):
        return 2
    return 1


def init_bound(name: str, shape: tuple[int, ...]) -> float:
    """Glorot-uniform radius; stacked gate matrices use the per-gate fan-out."""
    fan_in, fan_out = shape
    fan_out //= _gate_blocks(name)
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(h: Hyperparameters, n_src: int, n_out: int) -> Params:
    rng = np.random.default_rng(h.seed)
    params = {}
    for name, shape in param_shapes(h, n_src, n_out).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            r = init_bound(name, shape)
            params[name] = rng.uniform(-r, r, size=shape)
    return params


def _gru(xp, h, U_zr, U_h, F, H):
    zr = F.sigmoid(xp[:, : 2 * H] + h @ U_zr)
    z, r = zr[:, :H], zr[:, H:]
    cand = F.tanh(xp[:, 2 * H:] + (r * h) @ U_h)
    return h + z * (cand - h)


def _encode(P, X, mask, F, H):
    B, L = X.shape
    m = mask[:, :, None].astype(np.float64)

    def run(prefix, steps):
        h = np.zeros((B, H))
        out = [None] * L
        for t in steps:
            xp = F.embed(P["src_emb"], X[:, t]) @ P[prefix + "W"] + P[prefix + "b"]
            h_new = _gru(xp, h, P[prefix + "U_zr"], P[prefix + "U_h"], F, H)
            # padded positions carry the previous state through unchanged
            h = h + m[:, t] * (h_new - h)
            out[t] = h
        return out

    fwd = F.stack(run("enc_fwd_", range(L)), axis=1)
    bwd = F.stack(run("enc_bwd_", reversed(range(L))), axis=1)
    return F.concat([fwd, bwd])


def _decoder_step(P, prev, g, c, S, K, mask, F, H):
    xp = F.concat([F.embed(P["tgt_emb"], prev), c]) @ P["dec_W"] + P["dec_b"]
    g = _gru(xp, g, P["dec_U_zr"], P["dec_U_h"], F, H)
    alpha = F.masked_softmax(F.attention_scores(g, K), mask)
    c = F.attention_context(alpha, S)
    log_probs = F.log_softmax(F.concat([g, c]) @ P["out_W"] + P["out_b"])
    return g, c, log_probs


def _pad(seqs, pad=PAD):
    L = max(len(s) for s in seqs)
    arr = np.full((len(seqs), L), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        arr[i, : len(s)] = s
        mask[i, : len(s)] = True
    return arr, mask


def _hidden(P) -> int:
    return P["dec_U_h"].shape[0]


def _loss(P, batch: Sequence[EncodedSample], F):
    if not batch:
        raise ValueError("empty batch")
    if any(len(s.x) == 0 for s in batch):
        raise ValueError("source sequences must be non-empty")
    H = _hidden(P)
    X, xmask = _pad([s.x for s in batch])
    Y_in, _ = _pad([(BOS,) + tuple(s.y) for s in batch])
    Y_out, ymask = _pad([tuple(s.y) + (EOS,) for s in batch])
    S = _encode(P, X, xmask, F, H)
    K = S @ P["attn_W"]
    weights = -ymask.astype(np.float64) / ymask.sum()
    B = len(batch)
    g, c = np.zeros((B, H)), np.zeros((B, 2 * H))
    loss = 0.0
    picked = []
    for t in range(Y_in.shape[1]):
        g, c, lp = _decoder_step(P, Y_in[:, t], g, c, S, K, xmask, F, H)
        step = F.pick(lp, Y_out[:, t])
        picked.append(step)
        loss = loss + F.weighted_sum(step, weights[:, t])
    return loss, picked, ymask


def _check_finite(value, what="loss"):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {what}")


def forward_loss(params: Params, batch: Sequence[EncodedSample]) -> tuple[float, list[np.ndarray]]:
    """Mean per-token negative log-likelihood under teacher forcing.

    Also returns, per sample, the log-probabilities of each gold symbol with
    EOS as the last entry.
    """
    loss, picked, ymask = _loss(params, batch, NumpyOps)
    _check_finite(loss)
    steps = np.stack(picked, axis=1)
    return float(loss), [steps[i, ymask[i]] for i in range(len(batch))]


def gradients(params: Params, batch: Sequence[EncodedSample]) -> tuple[float, Params]:
    """Loss and exact (unclipped) gradients with respect to every parameter."""
    leaves = {k: ad.leaf(v) for k, v in params.items()}
    loss, _, _ = _loss(leaves, batch, TensorOps)
    _check_finite(loss.value)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}
    return float(loss.value), grads


def check_gradients(params: Params, sample: EncodedSample, epsilon: float = 1e-5,
                    n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a fixed random subset of ``n_coords`` coordinates (all of them if
    the model is smaller).
    """
    _, grads = gradients(params, [sample])
    coords = [(name, i) for name, v in params.items() for i in range(v.size)]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(coords), size=min(n_coords, len(coords)), replace=False)
    work = {k: v.copy() for k, v in params.items()}
    worst = 0.0
    for j in sorted(chosen):
        name, i = coords[j]
        flat = work[name].reshape(-1)
        old = flat[i]
        flat[i] = old + epsilon
        hi = forward_loss(work, [sample])[0]
        flat[i] = old - epsilon
        lo = forward_loss(work, [sample])[0]
        flat[i] = old
        numeric = (hi - lo) / (2 * epsilon)
        analytic = grads[name].reshape(-1)[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def greedy_batch(params: Params, xs: Sequence[Sequence[int]], max_lens: Sequence[int]) -> list[tuple[int, ...]]:
    """Batched greedy decoding; EOS wins ties with the best other symbol."""
    H = _hidden(params)
    X, xmask = _pad(list(xs))
    S = _encode(params, X, xmask, NumpyOps, H)
    K = S @ params["attn_W"]
    B = len(xs)
    g, c = np.zeros((B, H)), np.zeros((B, 2 * H))
    prev = np.full(B, BOS)
    outputs = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    max_lens = np.asarray(max_lens)
    t = 0
    while not done.all():
        g, c, lp = _decoder_step(params, prev, g, c, S, K, xmask, NumpyOps, H)
        others = lp.copy()
        others[:, EOS] = -np.inf
        best = others.argmax(axis=1)
        stop = (lp[:, EOS] >= others[np.arange(B), best]) | (t >= max_lens)
        for i in np.flatnonzero(~done & ~stop):
            outputs[i].append(int(best[i]))
        done |= stop
        prev = np.where(stop, EOS, best)
        t += 1
    return [tuple(o) for o in outputs]


def default_max_len(x: Sequence[int]) -> int:
    return 2 * len(x) + 5


def exact_match(params: Params, samples: Sequence[EncodedSample], batch_size: int = 64) -> float:
    if not samples:
        return math.nan
    hits = 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i: i + batch_size]
        preds = greedy_batch(params, [s.x for s in chunk], [default_max_len(s.x) for s in chunk])
        hits += sum(p == tuple(s.y) for p, s in zip(preds, chunk))
    return hits / len(samples)


class _Adam:
    def __init__(self, params: Params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_by_global_norm(grads: Params, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train(train_set: Sequence[EncodedSample], dev_set: Sequence[EncodedSample], h: Hyperparameters,
          vocab: Vocabulary) -> tuple[Params, TrainReport]:
    """Adam with global-norm clipping and early stopping on dev exact match.

    Returns the parameters of the best dev epoch (earliest on ties).
    """
    if not train_set:
        raise ValueError("training set is empty")
    start = time.perf_counter()
    report = TrainReport(train_size=len(train_set))
    with threadpool_limits(limits=1):
        params = init_params(h, len(vocab), vocab.num_outputs)
        opt = _Adam(params, h.learning_rate)
        rng = np.random.default_rng(h.seed)
        best, best_acc, stale = copy.deepcopy(params), -math.inf, 0
        for epoch in range(1, h.max_epochs + 1):
            order = rng.permutation(len(train_set))
            total, tokens = 0.0, 0
            for b, i in enumerate(range(0, len(order), h.batch_size)):
                batch = [train_set[j] for j in order[i: i + h.batch_size]]
                try:
                    loss, grads = gradients(params, batch)
                except DivergenceError as exc:
                    raise DivergenceError(f"{exc} at epoch {epoch}, batch {b}") from None
                clip_by_global_norm(grads, h.grad_clip_norm)
                opt.step(params, grads)
                n = sum(len(s.y) + 1 for s in batch)
                total += loss * n
                tokens += n
            report.epoch_losses.append(total / tokens)
            acc = exact_match(params, dev_set)
            report.dev_accuracies.append(acc)
            log.info("epoch %d loss %.4f dev %.4f", epoch, total / tokens, acc)
            if not dev_set or acc > best_acc:
                best, best_acc, stale = copy.deepcopy(params), acc, 0
                report.selected_epoch = epoch
            else:
                stale += 1
                if stale >= h.patience:
                    break
    report.wall_time = time.perf_counter() - start
    return best, report


class TransducerState(ModelState):
    __slots__ = ("encoded", "hidden", "context")

    def __init__(self, encoded, hidden, context, log_probs):
        super().__init__(log_probs)
        self.encoded = encoded
        self.hidden = hidden
        self.context = context


class _Encoded:
    __slots__ = ("S", "K", "mask")

    def __init__(self, S, K, mask):
        self.S, self.K, self.mask = S, K, mask


class Transducer(SequenceModel):
    """Trained parameters exposed through the :class:`SequenceModel` interface."""

    def __init__(self, params: Params, hyper: Hyperparameters, vocab: Vocabulary):
        self.params = params
        self.hyper = hyper
        self.vocab = vocab
        self.eos = EOS
        self.num_symbols = vocab.num_outputs
        self._H = hyper.hidden_dim

    def start(self, x: Sequence[int]) -> TransducerState:
        if len(x) == 0:
            raise ValueError("source sequence must be non-empty")
        for sym in x:
            if not 0 <= sym < len(self.vocab):
                raise IndexError(f"source symbol {sym} out of range")
        X = np.asarray([x], dtype=np.int64)
        mask = np.ones_like(X, dtype=bool)
        S = _encode(self.params, X, mask, NumpyOps, self._H)
        enc = _Encoded(S, S @ self.params["attn_W"], mask)
        root = TransducerState(enc, np.zeros((1, self._H)), np.zeros((1, 2 * self._H)), None)
        return self._step([root], [BOS])[0]

    def advance(self, state: TransducerState, symbol: int) -> TransducerState:
        self.check_symbol(symbol)
        return self._step([state], [symbol])[0]

    def _step(self, states, symbols):
        enc = states[0].encoded
        g = np.concatenate([s.hidden for s in states])
        c = np.concatenate([s.context for s in states])
        B = len(states)
        S = np.broadcast_to(enc.S, (B,) + enc.S.shape[1:])
        K = np.broadcast_to(enc.K, (B,) + enc.K.shape[1:])
        mask = np.broadcast_to(enc.mask, (B, enc.mask.shape[1]))
        g, c, lp = _decoder_step(self.params, np.asarray(symbols), g, c, S, K, mask, NumpyOps, self._H)
        return [TransducerState(enc, g[i: i + 1], c[i: i + 1], lp[i]) for i in range(B)]


def save_model(params: Params, h: Hyperparameters, vocab: Vocabulary, path: str | Path,
               metadata: dict | None = None) -> None:
    """Write ``mitd1``: magic line, length-prefixed JSON header, little-endian float64 arrays."""
    manifest = [[name, list(v.shape)] for name, v in params.items()]
    header = json.dumps({"hyperparameters": asdict(h), "vocabulary": vocab.dumps(),
                         "arrays": manifest, "metadata": metadata or {}},
                        sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for v in params.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_model(path: str | Path) -> tuple[Params, Hyperparameters, Vocabulary, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ModelVersionError(f"{path}: not a mitd1 model file")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise TruncatedModelError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + n:
        raise TruncatedModelError(f"{path}: truncated header")
    header = json.loads(data[pos: pos + n].decode("utf-8"))
    pos += n
    h = Hyperparameters(**header["hyperparameters"])
    vocab = Vocabulary.loads(header["vocabulary"])
    expected = param_shapes(h, len(vocab), vocab.num_outputs)
    manifest = {name: tuple(shape) for name, shape in header["arrays"]}
    if manifest != expected or [n for n, _ in header["arrays"]] != list(expected):
        raise ShapeMismatchError(f"{path}: array manifest does not match hyperparameters/vocabulary")
    params = {}
    for name, shape in manifest.items():
        size = int(np.prod(shape)) * 8
        if len(data) < pos + size:
            raise TruncatedModelError(f"{path}: truncated array {name}")
        params[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += size
    if pos != len(data):
        raise ModelFileError(f"{path}: {len(data) - pos} trailing bytes")
    return params, h, vocab, header.get("metadata", {})
