"""Deterministic synthetic inflection language for desk-scale experiments."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RawSample, format_unimorph

LETTERS = "aeioubdgklmnprstfhjvwzcxyq"
UMLAUT = {"a": "ä", "o": "ö", "u": "ü"}

# MSD bundle -> rule name; every rule is a function of the lemma alone
PARADIGM = {
    ("N", "NOM", "SG"): "identity",
    ("N", "NOM", "PL"): "plural",
    ("N", "GEN", "SG"): "genitive",
    ("N", "DAT", "PL"): "dative_plural",
    ("V", "PST"): "past",
    ("ADJ", "CMP"): "comparative",
}


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    alphabet_size: int = 12
    min_len: int = 3
    max_len: int = 8
    train: int = 5000
    dev: int = 500
    test: int = 500
    seed: int = 1

    @property
    def alphabet(self) -> str:
        return LETTERS[: self.alphabet_size]


def _umlaut_last_vowel(stem: str) -> str:
    for i in range(len(stem) - 1, -1, -1):
        if stem[i] in "aeiou":
            return stem[:i] + UMLAUT.get(stem[i], stem[i]) + stem[i + 1:]
    return stem


def _plural(lemma: str) -> str:
    stem = _umlaut_last_vowel(lemma)
    return stem + ("n" if lemma[-1] in "aeiou" else "en")


def inflect(lemma: str, msd) -> str:
    rule = PARADIGM[tuple(msd)]
    if rule == "identity":
        return lemma
    if rule == "plural":
        return _plural(lemma)
    if rule == "genitive":
        return lemma + "s"
    if rule == "dative_plural":
        return _plural(lemma) + "d"
    if rule == "past":
        return "ge" + lemma + "t"
    if rule == "comparative":
        return lemma + ("r" if lemma.endswith("e") else "er")
    raise KeyError(rule)


def _capacity(spec: SynthSpec) -> int:
    a = spec.alphabet_size
    return sum(a**n for n in range(spec.min_len, spec.max_len + 1))


def _lemmas(spec: SynthSpec, n: int, rng: np.random.Generator) -> list[str]:
    alphabet = spec.alphabet
    if _capacity(spec) <= 4 * n:
        pool = ["".join(p) for k in range(spec.min_len, spec.max_len + 1)
                for p in itertools.product(alphabet, repeat=k)]
        return [pool[i] for i in rng.permutation(len(pool))[:n]]
    seen: dict[str, None] = {}
    while len(seen) < n:
        k = int(rng.integers(spec.min_len, spec.max_len + 1))
        seen.setdefault("".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=k)))
    return list(seen)


def generate(spec: SynthSpec) -> dict[str, list[RawSample]]:
    """Train/dev/test splits with pairwise-disjoint lemma sets, one MSD per lemma."""
    if not 1 <= spec.alphabet_size <= len(LETTERS):
        raise SynthError(f"alphabet size must be in [1, {len(LETTERS)}]")
    if not 1 <= spec.min_len <= spec.max_len:
        raise SynthError("need 1 <= min_len <= max_len")
    counts = {"train": spec.train, "dev": spec.dev, "test": spec.test}
    if min(counts.values()) < 1:
        raise SynthError("split sizes must be >= 1")
    total = sum(counts.values())
    if _capacity(spec) < total:
        raise SynthError(f"alphabet of {spec.alphabet_size} letters yields only {_capacity(spec)} distinct "
                         f"lemmas; {total} are needed for disjoint splits")
    rng = np.random.default_rng(spec.seed)
    lemmas = _lemmas(spec, total, rng)
    bundles = list(PARADIGM)
    choice = rng.integers(0, len(bundles), size=total)
    samples = [RawSample(lem, inflect(lem, bundles[c]), bundles[c]) for lem, c in zip(lemmas, choice)]
    out, i = {}, 0
    for name, n in counts.items():
        out[name] = samples[i: i + n]
        i += n
    return out


def write_splits(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, samples in generate(spec).items():
        path = out_dir / f"{name}.tsv"
        path.write_text(format_unimorph(samples), encoding="utf-8")
        paths[name] = path
    return paths
