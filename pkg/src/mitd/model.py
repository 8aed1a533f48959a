"""Locally normalized sequence models and exhaustive table models.

A model maps an encoded input ``x`` and a prefix to a normalized
log-probability vector over output symbols, one of which is EOS. Scores of
complete hypotheses are sums of these factors with EOS as the final step.
"""
from __future__ import annotations

import itertools
import math
from typing import Mapping, Sequence

import numpy as np

NEG_INF = -math.inf
NORMALIZATION_TOL = 1e-6


class SymbolRangeError(IndexError):
    pass


class ModelState:
    """Decoder state after consuming a prefix; ``log_probs`` is the next-step distribution."""

    __slots__ = ("log_probs",)

    def __init__(self, log_probs: np.ndarray):
        self.log_probs = log_probs


class SequenceModel:
    """Interface for p(y_t | x, y_<t).

    Subclasses implement :meth:`start` and :meth:`advance`. States are
    immutable; the same state may be advanced many times.
    """

    eos: int
    num_symbols: int

    def start(self, x: Sequence[int]) -> ModelState:
        raise NotImplementedError

    def advance(self, state: ModelState, symbol: int) -> ModelState:
        raise NotImplementedError

    def advance_batch(self, states: Sequence[ModelState], symbols: Sequence[int]) -> list[ModelState]:
        return [self.advance(s, y) for s, y in zip(states, symbols)]

    def check_symbol(self, symbol: int) -> None:
        if not 0 <= symbol < self.num_symbols:
            raise SymbolRangeError(f"symbol id {symbol} outside [0, {self.num_symbols})")


def next_log_probs(model: SequenceModel, x: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
    state = model.start(x)
    for y in prefix:
        model.check_symbol(y)
        if y == model.eos:
            raise ValueError("prefix must not contain EOS")
        state = model.advance(state, y)
    return state.log_probs


def sequence_log_prob(model: SequenceModel, x: Sequence[int], y: Sequence[int]) -> float:
    """Sum of log p(y_t | x, y_<t) plus the final log p(EOS | x, y)."""
    state = model.start(x)
    total = 0.0
    for sym in y:
        model.check_symbol(sym)
        if sym == model.eos:
            raise ValueError("y must not contain EOS; it is scored implicitly")
        total += float(state.log_probs[sym])
        if total == NEG_INF:
            return NEG_INF
        state = model.advance(state, sym)
    return total + float(state.log_probs[model.eos])


def empty_string_log_prob(model: SequenceModel, x: Sequence[int]) -> float:
    return float(model.start(x).log_probs[model.eos])


def logsumexp(v: np.ndarray) -> float:
    m = np.max(v)
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.sum(np.exp(v - m))))


def is_normalized(log_probs: np.ndarray, tol: float = NORMALIZATION_TOL) -> bool:
    return not np.isnan(log_probs).any() and abs(logsumexp(log_probs)) <= tol


class TableModel(SequenceModel):
    """Model given by an explicit table of next-symbol distributions.

    ``symbols`` are the non-EOS output spellings, with ids ``0..V-1``; EOS
    has id ``V``. Rows exist for every prefix shorter than ``depth``; at
    depth the model emits EOS with probability one. The input ``x`` is
    ignored.
    """

    def __init__(self, symbols: Sequence[str], rows: Mapping[tuple[int, ...], np.ndarray], depth: int):
        if depth < 0:
            raise ValueError("depth must be non-negative")
        self.symbols = tuple(symbols)
        self.depth = depth
        self.eos = len(self.symbols)
        self.num_symbols = self.eos + 1
        self._rows: dict[tuple[int, ...], np.ndarray] = {}
        for prefix, lp in rows.items():
            lp = np.asarray(lp, dtype=np.float64)
            lp.setflags(write=False)
            self._rows[tuple(prefix)] = lp
        forced = np.full(self.num_symbols, NEG_INF)
        forced[self.eos] = 0.0
        forced.setflags(write=False)
        self._forced = forced

    def start(self, x=()) -> "TableState":
        return self._state(())

    def advance(self, state: "TableState", symbol: int) -> "TableState":
        self.check_symbol(symbol)
        return self._state(state.prefix + (symbol,))

    def _state(self, prefix: tuple[int, ...]) -> "TableState":
        row = self._rows.get(prefix) if len(prefix) < self.depth else None
        # prefixes of zero probability have no row; their score is already -inf
        return TableState(prefix, self._forced if row is None else row)

    @property
    def rows(self) -> dict[tuple[int, ...], np.ndarray]:
        return dict(self._rows)

    def spell(self, prefix: Sequence[int]) -> str:
        return " ".join(self.symbols[i] if i != self.eos else "EOS" for i in prefix)

    def dumps(self) -> str:
        """Serialize as ``table v1``; probabilities are written with full precision."""
        lines = ["table v1", f"depth\t{self.depth}", "symbols\t" + " ".join(self.symbols)]
        for prefix, lp in self._rows.items():
            names = list(self.symbols) + ["EOS"]
            cells = ",".join(f"{names[i]}:{math.exp(v)!r}" for i, v in enumerate(lp))
            lines.append(f"{self.spell(prefix)}\t{cells}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TableModel":
        lines = text.rstrip("\n").split("\n")
        if len(lines) < 3 or lines[0] != "table v1":
            raise ValueError("not a table v1 file")
        depth = int(lines[1].split("\t")[1])
        symbols = lines[2].split("\t", 1)[1].split()
        index = {s: i for i, s in enumerate(symbols)}
        index["EOS"] = len(symbols)
        spec = {}
        for line in lines[3:]:
            prefix_s, cells = line.split("\t")
            prefix = tuple(index[s] for s in prefix_s.split())
            row = {}
            for cell in cells.split(","):
                name, p = cell.rsplit(":", 1)
                row[name] = float(p)
            spec[prefix] = row
        return make_table_model(spec, depth, symbols)


class TableState(ModelState):
    __slots__ = ("prefix",)

    def __init__(self, prefix: tuple[int, ...], log_probs: np.ndarray):
        super().__init__(log_probs)
        self.prefix = prefix


def _log(p: float) -> float:
    return math.log(p) if p > 0 else NEG_INF


def make_table_model(spec, depth: int, symbols: Sequence[str] | None = None, tol: float = 1e-9) -> TableModel:
    """Build a :class:`TableModel` from ``{prefix: {symbol: prob}}``.

    Prefixes may be strings of single-character symbols (``"ab"``) or
    tuples of symbol spellings/ids; ``"EOS"`` names the end symbol. Missing
    symbols get probability zero. Every prefix shorter than ``depth`` must
    have a row.
    """
    if symbols is None:
        seen: list[str] = []
        for prefix, row in spec.items():
            for s in list(prefix) + list(row):
                if isinstance(s, str) and s != "EOS" and s not in seen:
                    seen.append(s)
        symbols = sorted(seen)
    symbols = list(symbols)
    index = {s: i for i, s in enumerate(symbols)}
    index["EOS"] = len(symbols)

    def to_id(s):
        return s if isinstance(s, (int, np.integer)) else index[s]

    rows = {}
    for prefix, row in spec.items():
        key = tuple(to_id(s) for s in prefix)
        probs = np.zeros(len(symbols) + 1)
        for s, p in row.items():
            probs[to_id(s)] = p
        if (probs < 0).any() or abs(probs.sum() - 1.0) > tol:
            raise ValueError(f"row for prefix {prefix!r} sums to {probs.sum()!r}, not 1")
        rows[key] = np.array([_log(p) for p in probs])
    for length in range(depth):
        for prefix in itertools.product(range(len(symbols)), repeat=length):
            if prefix not in rows and _reachable(rows, prefix):
                raise ValueError(f"missing row for reachable prefix {prefix!r}")
    return TableModel(symbols, rows, depth)


def _reachable(rows, prefix) -> bool:
    for t in range(len(prefix)):
        parent = rows.get(prefix[:t])
        if parent is None or parent[prefix[t]] == NEG_INF:
            return False
    return True


def sample_random_model(seed: int, vocab_size: int, depth: int) -> TableModel:
    """Random table model: every row has i.i.d. weights in (0, 1], normalized."""
    if vocab_size < 1 or depth < 1:
        raise ValueError("vocab_size and depth must be >= 1")
    rng = np.random.default_rng(seed)
    symbols = [chr(ord("a") + i) if vocab_size <= 26 else f"s{i}" for i in range(vocab_size)]
    rows = {}
    for length in range(depth):
        for prefix in itertools.product(range(vocab_size), repeat=length):
            w = 1.0 - rng.random(vocab_size + 1)
            rows[prefix] = np.log(w / w.sum())
    return TableModel(symbols, rows, depth)


def one_hot_model(target: Sequence[str], symbols: Sequence[str] | None = None) -> TableModel:
    """Deterministic model that spells ``target`` with probability one."""
    symbols = list(symbols) if symbols is not None else sorted(set(target))
    index = {s: i for i, s in enumerate(symbols)}
    v = len(symbols)
    rows = {}
    for length in range(len(target) + 1):
        lp = np.full(v + 1, NEG_INF)
        lp[index[target[length]] if length < len(target) else v] = 0.0
        rows[tuple(index[s] for s in target[:length])] = lp
    return TableModel(symbols, rows, len(target) + 1)
