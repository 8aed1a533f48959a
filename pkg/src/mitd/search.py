"""Decoding strategies over any :class:`~mitd.model.SequenceModel`.

All strategies share one total order on hypotheses: higher score first, then
shorter, then lexicographic by symbol ids (a complete hypothesis precedes an
incomplete one with the same prefix). Scores are raw sums of log-probabilities
with no length normalization.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import NEG_INF, ModelState, SequenceModel

STRATEGIES = ("greedy", "beam", "exact", "brute_force")
ENUMERATION_LIMIT = 10**6


class SearchError(RuntimeError):
    pass


class QueueCapacityError(SearchError):
    def __init__(self, capacity: int, best: "DecodeResult | None"):
        self.best = best
        super().__init__(f"search queue exceeded capacity {capacity}")


class SearchExhaustedError(SearchError):
    pass


class EnumerationLimitError(SearchError):
    pass


@dataclass(frozen=True)
class SearchStats:
    nodes_expanded: int = 0
    max_queue_size: int = 0
    seconds: float = 0.0


@dataclass(frozen=True)
class DecodeResult:
    y_star: tuple[int, ...]
    score: float
    stats: SearchStats = field(default_factory=SearchStats, compare=False)


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "greedy"
    beam_width: int = 1
    max_len: int | None = None
    # a float, or a DecodeResult whose score bounds the search and which is
    # returned if everything else is pruned
    lower_bound: float | DecodeResult | None = None
    queue_capacity: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len is not None and self.max_len < 0:
            raise ValueError("max_len must be >= 0")

    @property
    def name(self) -> str:
        return f"beam:{self.beam_width}" if self.strategy == "beam" else self.strategy


def parse_strategy(text: str) -> DecodeConfig:
    """``greedy``, ``beam:K``, ``exact`` or ``brute_force``."""
    name, _, arg = text.strip().partition(":")
    if name == "beam":
        if not arg.isdigit() or int(arg) < 1:
            raise ValueError(f"beam strategy needs a positive width, got {text!r}")
        return DecodeConfig("beam", beam_width=int(arg))
    if arg:
        raise ValueError(f"strategy {name!r} takes no argument")
    return DecodeConfig(name)


def default_max_len(x: Sequence[int]) -> int:
    return 2 * len(x) + 5


class Hypothesis:
    """A prefix and its cumulative score; ``complete`` once EOS has been scored.

    The model state is materialized lazily from ``parent`` and the last symbol.
    """

    __slots__ = ("prefix", "score", "complete", "_state", "_parent")

    def __init__(self, prefix, score, complete=False, state=None, parent=None):
        self.prefix = prefix
        self.score = score
        self.complete = complete
        self._state = state
        self._parent = parent

    def key(self):
        return (-self.score, len(self.prefix), self.prefix, not self.complete)

    def state(self, model: SequenceModel) -> ModelState:
        if self._state is None:
            self._state = model.advance(self._parent.state(model), self.prefix[-1])
            self._parent = None
        return self._state

    def __repr__(self):
        return f"Hypothesis({self.prefix}, {self.score:.6g}{', complete' if self.complete else ''})"


def _key(h: Hypothesis):
    return h.key()


def _max_len(cfg: DecodeConfig, x) -> int:
    return default_max_len(x) if cfg.max_len is None else cfg.max_len


def _finite_symbols(log_probs: np.ndarray, eos: int) -> np.ndarray:
    ids = np.flatnonzero(log_probs > NEG_INF)
    return ids[ids != eos]


def greedy_decode(model: SequenceModel, x: Sequence[int], cfg: DecodeConfig = DecodeConfig()) -> DecodeResult:
    """Follow the argmax symbol until EOS is the argmax or ``max_len`` is reached.

    Among non-EOS symbols ties go to the lowest id; EOS wins a tie with the
    best non-EOS symbol (the shorter hypothesis). This makes greedy decoding
    coincide with beam search at width one.
    """
    t0 = time.perf_counter()
    max_len = _max_len(cfg, x)
    eos = model.eos
    state = model.start(x)
    prefix: list[int] = []
    score = 0.0
    nodes = 0
    while True:
        nodes += 1
        lp = state.log_probs
        if len(prefix) < max_len:
            others = lp.copy()
            others[eos] = NEG_INF
            best = int(np.argmax(others))
            if others[best] > lp[eos]:
                prefix.append(best)
                score += float(lp[best])
                state = model.advance(state, best)
                continue
        score += float(lp[eos])
        break
    return DecodeResult(tuple(prefix), score, SearchStats(nodes, 1, time.perf_counter() - t0))


def beam_decode(model: SequenceModel, x: Sequence[int], cfg: DecodeConfig) -> DecodeResult:
    """Beam search keeping the ``beam_width`` best hypotheses per step.

    EOS-completions compete for beam slots with ordinary extensions and are
    never extended. Search stops once the best hypothesis in the beam is
    complete (no extension can overtake it, since scores only decrease) or
    no incomplete hypotheses remain. The best complete hypothesis that ever
    entered the beam is returned.
    """
    t0 = time.perf_counter()
    k = cfg.beam_width
    max_len = _max_len(cfg, x)
    eos = model.eos
    beam = [Hypothesis((), 0.0, state=model.start(x))]
    finished: list[Hypothesis] = []
    nodes = 0
    max_queue = 1
    while True:
        active = [h for h in beam if not h.complete]
        if not active:
            break
        cands = [h for h in beam if h.complete]
        for h in active:
            nodes += 1
            lp = h.state(model).log_probs
            cands.append(Hypothesis(h.prefix, h.score + float(lp[eos]), complete=True))
            if len(h.prefix) < max_len:
                for tok in _finite_symbols(lp, eos):
                    tok = int(tok)
                    cands.append(Hypothesis(h.prefix + (tok,), h.score + float(lp[tok]), parent=h))
        max_queue = max(max_queue, len(cands))
        new_beam = heapq.nsmallest(k, cands, key=_key)
        pending = [h for h in new_beam if not h.complete]
        if pending:
            states = model.advance_batch([h._parent.state(model) for h in pending], [h.prefix[-1] for h in pending])
            for h, s in zip(pending, states):
                h._state, h._parent = s, None
        in_beam = {id(h) for h in beam}
        finished.extend(h for h in new_beam if h.complete and id(h) not in in_beam)
        beam = new_beam
        if beam[0].complete:
            break
    best = min(finished, key=_key)
    return DecodeResult(best.prefix, best.score, SearchStats(nodes, max_queue, time.perf_counter() - t0))


def dijkstra_decode(model: SequenceModel, x: Sequence[int], cfg: DecodeConfig = DecodeConfig("exact")) -> DecodeResult:
    """Exact MAP decoding by best-first search.

    Because every factor is a log-probability (<= 0), a prefix never scores
    higher than any of its extensions' ancestors, so the first complete
    hypothesis popped is a global optimum. Pushes scoring strictly below
    ``cfg.lower_bound`` are dropped; this never removes a hypothesis at
    least as good as the bound.
    """
    t0 = time.perf_counter()
    max_len = _max_len(cfg, x)
    eos = model.eos
    fallback = cfg.lower_bound if isinstance(cfg.lower_bound, DecodeResult) else None
    bound = fallback.score if fallback is not None else cfg.lower_bound
    bound = NEG_INF if bound is None else bound
    capacity = cfg.queue_capacity

    root = Hypothesis((), 0.0, state=model.start(x))
    heap = [(root.key(), root)]
    best_complete: Hypothesis | None = None
    nodes = 0
    max_queue = 1

    def stats():
        return SearchStats(nodes, max_queue, time.perf_counter() - t0)

    def push(h: Hypothesis):
        nonlocal best_complete, max_queue
        if h.score == NEG_INF or h.score < bound:
            return
        heapq.heappush(heap, (h.key(), h))
        if h.complete and (best_complete is None or h.key() < best_complete.key()):
            best_complete = h
        max_queue = max(max_queue, len(heap))
        if capacity is not None and len(heap) > capacity:
            best = None if best_complete is None else DecodeResult(best_complete.prefix, best_complete.score, stats())
            raise QueueCapacityError(capacity, best)

    while heap:
        _, h = heapq.heappop(heap)
        if h.complete:
            return DecodeResult(h.prefix, h.score, stats())
        nodes += 1
        lp = h.state(model).log_probs
        push(Hypothesis(h.prefix, h.score + float(lp[eos]), complete=True))
        if len(h.prefix) < max_len:
            for tok in _finite_symbols(lp, eos):
                tok = int(tok)
                push(Hypothesis(h.prefix + (tok,), h.score + float(lp[tok]), parent=h))
    if fallback is not None:
        return replace(fallback, stats=stats())
    raise SearchExhaustedError("every hypothesis was pruned or has zero probability")


def brute_force_argmax(model: SequenceModel, x: Sequence[int], max_len: int,
                       limit: int = ENUMERATION_LIMIT) -> DecodeResult:
    """Score every sequence of length <= ``max_len`` and return the best.

    Subtrees under a zero-probability prefix are skipped: all their members
    score -inf and are longer than the (always scored) empty sequence.
    """
    t0 = time.perf_counter()
    n_sym = model.num_symbols - 1
    count = sum(n_sym**n for n in range(max_len + 1))
    if count > limit:
        raise EnumerationLimitError(f"{count} hypotheses exceed the enumeration limit {limit}")
    eos = model.eos
    best_key, best = None, None
    nodes = 0
    stack = [Hypothesis((), 0.0, state=model.start(x))]
    while stack:
        h = stack.pop()
        nodes += 1
        lp = h.state(model).log_probs
        c = Hypothesis(h.prefix, h.score + float(lp[eos]), complete=True)
        if best_key is None or c.key() < best_key:
            best_key, best = c.key(), c
        if len(h.prefix) < max_len:
            for tok in range(model.num_symbols):
                if tok != eos and lp[tok] > NEG_INF:
                    stack.append(Hypothesis(h.prefix + (tok,), h.score + float(lp[tok]), parent=h))
    return DecodeResult(best.prefix, best.score, SearchStats(nodes, 0, time.perf_counter() - t0))


def decode(model: SequenceModel, x: Sequence[int], cfg: DecodeConfig) -> DecodeResult:
    if cfg.strategy == "greedy":
        return greedy_decode(model, x, cfg)
    if cfg.strategy == "beam":
        return beam_decode(model, x, cfg)
    if cfg.strategy == "exact":
        return dijkstra_decode(model, x, cfg)
    return brute_force_argmax(model, x, _max_len(cfg, x))
