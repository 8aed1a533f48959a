"""UniMorph-style inflection data: parsing, vocabularies, encoding."""
from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS, EOS, UNK, PAD = 0, 1, 2, 3
RESERVED = ("<s>", "</s>", "<unk>", "<pad>")

VOCAB_HEADER = "vocab v1"


class DataError(ValueError):
    """Malformed input data."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class Kind(str, enum.Enum):
    CHARACTER = "character"
    TAG = "msd-tag"
    RESERVED = "reserved"


class ResourceClass(str, enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


@dataclass(frozen=True)
class RawSample:
    lemma: str
    target: str
    msd: tuple[str, ...] = ()


@dataclass(frozen=True)
class EncodedSample:
    x: tuple[int, ...]
    y: tuple[int, ...]


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def parse_unimorph(text: str, path: str | None = None) -> list[RawSample]:
    """Parse tab-separated ``lemma, form, feat1;feat2;...`` lines.

    Blank lines are skipped. Text is NFC-normalized so that precomposed
    characters such as ``ü`` become a single symbol.
    """
    samples = []
    for lineno, line in enumerate(_nfc(text).splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) < 3:
            raise DataError(f"expected 3 tab-separated fields, got {len(fields)}", lineno, path)
        lemma, form, feats = (f.strip() for f in fields[:3])
        if not lemma:
            raise DataError("empty lemma", lineno, path)
        if not form:
            raise DataError("empty inflected form", lineno, path)
        msd = tuple(f.strip() for f in feats.split(";") if f.strip())
        samples.append(RawSample(lemma, form, msd))
    return samples


def read_unimorph(path: str | Path) -> list[RawSample]:
    path = Path(path)
    return parse_unimorph(path.read_text(encoding="utf-8"), path=str(path))


def format_unimorph(samples: Iterable[RawSample]) -> str:
    return "".join(f"{s.lemma}\t{s.target}\t{';'.join(s.msd)}\n" for s in samples)


@dataclass
class Vocabulary:
    """Dense symbol table: reserved ids 0-3, then characters, then tags.

    Characters and tags live in separate namespaces, so the tag ``GEN`` never
    collides with a character spelled the same way.
    """

    spellings: list[str] = field(default_factory=lambda: list(RESERVED))
    kinds: list[Kind] = field(default_factory=lambda: [Kind.RESERVED] * len(RESERVED))

    def __post_init__(self):
        self._index = {}
        for i, (s, k) in enumerate(zip(self.spellings, self.kinds)):
            if (k, s) in self._index:
                raise DataError(f"duplicate {k.value} symbol {s!r}")
            self._index[(k, s)] = i
        if tuple(self.spellings[:4]) != RESERVED or any(k is not Kind.RESERVED for k in self.kinds[:4]):
            raise DataError("reserved symbols must occupy ids 0-3")
        seen_tag = False
        for k in self.kinds[4:]:
            if k is Kind.RESERVED:
                raise DataError("reserved symbol outside ids 0-3")
            if k is Kind.TAG:
                seen_tag = True
            elif seen_tag:
                raise DataError("character symbols must precede tag symbols")

    def __len__(self) -> int:
        return len(self.spellings)

    def add(self, spelling: str, kind: Kind) -> int:
        key = (kind, spelling)
        if key not in self._index:
            self._index[key] = len(self.spellings)
            self.spellings.append(spelling)
            self.kinds.append(kind)
        return self._index[key]

    def lookup(self, spelling: str, kind: Kind = Kind.CHARACTER) -> int:
        return self._index.get((kind, spelling), UNK)

    def __contains__(self, key: tuple[str, Kind]) -> bool:
        spelling, kind = key
        return (kind, spelling) in self._index

    @property
    def num_outputs(self) -> int:
        """Size of the output space: reserved symbols plus characters."""
        return sum(1 for k in self.kinds if k is not Kind.TAG)

    def characters(self) -> list[str]:
        return [s for s, k in zip(self.spellings, self.kinds) if k is Kind.CHARACTER]

    def tags(self) -> list[str]:
        return [s for s, k in zip(self.spellings, self.kinds) if k is Kind.TAG]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.spellings[i] for i in ids)

    def dumps(self) -> str:
        lines = [VOCAB_HEADER]
        lines += [f"{i}\t{k.value}\t{s}" for i, (s, k) in enumerate(zip(self.spellings, self.kinds))]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if not lines or lines[0] != VOCAB_HEADER:
            raise DataError(f"not a vocabulary file (expected header {VOCAB_HEADER!r})", 1)
        spellings, kinds = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError("expected id, kind, spelling", lineno)
            if int(parts[0]) != len(spellings):
                raise DataError(f"non-dense id {parts[0]}", lineno)
            try:
                kinds.append(Kind(parts[1]))
            except ValueError:
                raise DataError(f"unknown symbol kind {parts[1]!r}", lineno) from None
            spellings.append(parts[2])
        return cls(spellings, kinds)


def build_vocabulary(samples: Sequence[RawSample]) -> Vocabulary:
    """Reserved symbols, then characters in first-seen order, then tags."""
    if not samples:
        raise DataError("cannot build a vocabulary from zero samples")
    vocab = Vocabulary()
    for s in samples:
        for ch in s.lemma + s.target:
            vocab.add(ch, Kind.CHARACTER)
    for s in samples:
        for tag in s.msd:
            vocab.add(tag, Kind.TAG)
    return vocab


@dataclass
class EncodeStats:
    unknown_source: int = 0
    unknown_target: int = 0
    all_unknown_targets: int = 0


def encode_sample(vocab: Vocabulary, sample: RawSample, stats: EncodeStats | None = None) -> EncodedSample:
    x = [vocab.lookup(ch, Kind.CHARACTER) for ch in sample.lemma]
    x += [vocab.lookup(tag, Kind.TAG) for tag in sample.msd]
    y = [vocab.lookup(ch, Kind.CHARACTER) for ch in sample.target]
    if stats is not None:
        stats.unknown_source += x.count(UNK)
        n_unk = y.count(UNK)
        stats.unknown_target += n_unk
        if y and n_unk == len(y):
            stats.all_unknown_targets += 1
    return EncodedSample(tuple(x), tuple(y))


def encode_all(vocab: Vocabulary, samples: Iterable[RawSample]) -> tuple[list[EncodedSample], EncodeStats]:
    stats = EncodeStats()
    return [encode_sample(vocab, s, stats) for s in samples], stats


def classify_resource(train_size: int) -> ResourceClass:
    if train_size < 0:
        raise ValueError("train_size must be non-negative")
    if train_size < 1000:
        return ResourceClass.LOW
    if train_size >= 10000:
        return ResourceClass.HIGH
    return ResourceClass.MID
