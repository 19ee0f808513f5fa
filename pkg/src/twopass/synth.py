"""Deterministic synthetic corpus and posterior generation.

All randomness flows from PCG64 raw output (seeded through SeedSequence with
the configured seed plus fixed domain/split/utterance keys) pushed through
explicit inverse-CDF transforms, so identical configs reproduce identical
bytes on any platform. Word frequencies follow a Zipf law; every word gets
one or two random pronunciations; posterior rows place mass alpha' on the
true symbol and spread the remainder over the others, drawn once per symbol
span with one dominant confusion symbol (per-frame independent noise would
almost never change a CTC decision). Rare-token degradation applies to the
e2e mode only; phoneme matrices are byte-identical across delta values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BLANK, WORD_BOUNDARY, Lexicon, PosteriorMatrix, Vocabulary, parse_lexicon

SILENCE = "sil"

_DOMAIN_CORPUS = 1
_DOMAIN_E2E = 2
_DOMAIN_PHONEME = 3
_SPLIT_CODES = {"train": 0, "dev": 1, "test": 2}

_EXP_FLOOR = 1e-12
_ALPHA_ONE_FLOOR = 1e-30


class SeededStream:
    """Deterministic scalar sampler over the raw PCG64 output stream."""

    def __init__(self, *key: int) -> None:
        self._bits = np.random.PCG64(np.random.SeedSequence(list(key)))
        self._buf: list[int] = []

    def _raw(self) -> int:
        if not self._buf:
            self._buf = [int(x) for x in self._bits.random_raw(128)][::-1]
        return self._buf.pop()

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self._raw() >> 11) * 2.0 ** -53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive."""
        n = hi - lo + 1
        return lo + min(int(self.uniform() * n), n - 1)

    def exponential(self) -> float:
        return max(-math.log1p(-self.uniform()), _EXP_FLOOR)

    def choice(self, cdf: np.ndarray) -> int:
        """Index sampled from a cumulative distribution (cdf[-1] == 1)."""
        return int(np.searchsorted(cdf, self.uniform(), side="right"))


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; see field names. alpha*(1-delta) must stay above
    chance level for the e2e symbol inventory."""

    seed: int
    vocab_size: int = 40
    phoneme_count: int = 12
    zipf_exponent: float = 1.0
    train_utts: int = 200
    dev_utts: int = 50
    test_utts: int = 100
    len_range: tuple[int, int] = (2, 5)
    frames_per_symbol: tuple[int, int] = (2, 3)
    blank_prob: float = 0.3
    silence_prob: float = 0.3
    alpha: float = 0.8
    delta: float = 0.0
    rare_quantile: float = 0.2
    pron_len_range: tuple[int, int] = (2, 4)
    second_pron_prob: float = 0.3
    confusion_share: tuple[float, float] = (0.5, 0.95)
    ngram_order: int = 2

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.phoneme_count < 2:
            raise ValueError("phoneme_count must be >= 2")
        if self.zipf_exponent < 0.0:
            raise ValueError("zipf_exponent must be >= 0")
        for name in ("train_utts", "dev_utts", "test_utts"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)
        for name in ("len_range", "frames_per_symbol", "pron_len_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError("%s must satisfy 1 <= lo <= hi" % name)
        for name in ("blank_prob", "silence_prob", "second_pron_prob"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError("%s must be in [0, 1]" % name)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        if not 0.0 <= self.rare_quantile <= 1.0:
            raise ValueError("rare_quantile must be in [0, 1]")
        lo, hi = self.confusion_share
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError("confusion_share must satisfy 0 <= lo <= hi < 1")
        if self.ngram_order < 1:
            raise ValueError("ngram_order must be >= 1")
        if self.alpha * (1.0 - self.delta) <= 1.0 / (self.vocab_size + 1):
            raise ValueError("alpha*(1-delta) must exceed chance level")

    @property
    def rare_word_count(self) -> int:
        return int(self.rare_quantile * self.vocab_size)


@dataclass(frozen=True)
class Corpus:
    """Generated transcripts plus the shared inventories."""

    train: tuple[tuple[str, tuple[str, ...]], ...]
    dev: tuple[tuple[str, tuple[str, ...]], ...]
    test: tuple[tuple[str, tuple[str, ...]], ...]
    lexicon: Lexicon
    lexicon_lines: tuple[str, ...]
    wordpiece_vocab: Vocabulary
    phoneme_vocab: Vocabulary
    rare_token_ids: frozenset[int] = field(default_factory=frozenset)

    def split(self, name: str) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]

    @property
    def silence_id(self) -> int:
        return self.phoneme_vocab.id_of(SILENCE)


def _zipf_cdf(config: SynthConfig) -> np.ndarray:
    ranks = np.arange(1, config.vocab_size + 1, dtype=np.float64)
    probs = ranks ** -config.zipf_exponent
    probs /= probs.sum()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return cdf


def _word_name(rank: int, config: SynthConfig) -> str:
    width = len(str(config.vocab_size - 1))
    return "w%0*d" % (width, rank)


def _phoneme_name(idx: int, config: SynthConfig) -> str:
    width = len(str(config.phoneme_count - 1))
    return "p%0*d" % (width, idx)


def gen_corpus(config: SynthConfig) -> Corpus:
    """Generate train/dev/test transcripts, a lexicon and both vocabularies."""
    words = [_word_name(r, config) for r in range(config.vocab_size)]
    phonemes = [_phoneme_name(i, config) for i in range(config.phoneme_count)]
    wordpiece_vocab = Vocabulary(
        (BLANK,) + tuple(WORD_BOUNDARY + w for w in words))
    phoneme_vocab = Vocabulary(tuple(phonemes) + (SILENCE,))

    lex_stream = SeededStream(config.seed, _DOMAIN_CORPUS, 0)
    lines: list[str] = []
    for word in words:
        n_prons = 2 if lex_stream.uniform() < config.second_pron_prob else 1
        prons: list[tuple[str, ...]] = []
        while len(prons) < n_prons:
            length = lex_stream.randint(*config.pron_len_range)
            pron = tuple(
                phonemes[lex_stream.randint(0, config.phoneme_count - 1)]
                for _ in range(length))
            tries = 0
            while pron in prons and tries < 50:
                pron = tuple(
                    phonemes[lex_stream.randint(0, config.phoneme_count - 1)]
                    for _ in range(length))
                tries += 1
            if pron in prons:
                pron = pron + (phonemes[lex_stream.randint(0, config.phoneme_count - 1)],)
            prons.append(pron)
        if n_prons == 1:
            lines.append("%s\t%s" % (word, " ".join(prons[0])))
        else:
            p1 = round(0.5 + 0.4 * lex_stream.uniform(), 2)
            p2 = round(1.0 - p1, 2)
            lines.append("%s\t%s\t%s" % (word, ("%.2f" % p1), " ".join(prons[0])))
            lines.append("%s\t%s\t%s" % (word, ("%.2f" % p2), " ".join(prons[1])))
    lexicon = parse_lexicon(lines, phoneme_vocab)

    cdf = _zipf_cdf(config)
    splits = {}
    for split, count in (("train", config.train_utts), ("dev", config.dev_utts),
                         ("test", config.test_utts)):
        stream = SeededStream(
            config.seed, _DOMAIN_CORPUS, 10 + _SPLIT_CODES[split])
        utts = []
        for i in range(count):
            length = stream.randint(*config.len_range)
            sampled = tuple(words[stream.choice(cdf)] for _ in range(length))
            utts.append(("%s-%04d" % (split, i), sampled))
        splits[split] = tuple(utts)

    rare = frozenset(
        r + 1 for r in range(config.vocab_size - config.rare_word_count,
                             config.vocab_size))
    return Corpus(
        train=splits["train"], dev=splits["dev"], test=splits["test"],
        lexicon=lexicon, lexicon_lines=tuple(lines),
        wordpiece_vocab=wordpiece_vocab, phoneme_vocab=phoneme_vocab,
        rare_token_ids=rare)


def _span_row(n_symbols: int, true_id: int, true_mass: float,
              config: SynthConfig, stream: SeededStream) -> np.ndarray:
    """One normalized log-probability row shared by every frame of a span."""
    wrong = 1.0 - true_mass
    if wrong <= 0.0:
        wrong = _ALPHA_ONE_FLOOR
    p = np.zeros(n_symbols, dtype=np.float64)
    p[true_id] = true_mass
    others = [i for i in range(n_symbols) if i != true_id]
    if len(others) == 1:
        p[others[0]] = wrong
    else:
        distractor = others[stream.randint(0, len(others) - 1)]
        rho = stream.uniform_range(*config.confusion_share)
        p[distractor] = wrong * rho
        rest = [o for o in others if o != distractor]
        weights = [stream.exponential() for _ in rest]
        total = sum(weights)
        for o, w in zip(rest, weights):
            p[o] = wrong * (1.0 - rho) * w / total
    p /= p.sum()
    return np.log(p)


def _spans_to_matrix(spans, vocab: Vocabulary, config: SynthConfig,
                     stream: SeededStream) -> PosteriorMatrix:
    n_symbols = len(vocab)
    rows = []
    for sym_id, n_frames, true_mass in spans:
        row = _span_row(n_symbols, sym_id, true_mass, config, stream)
        for _ in range(n_frames):
            rows.append(row)
    return PosteriorMatrix(np.array(rows, dtype=np.float64), vocab)


def gen_posteriors(words, config: SynthConfig, corpus: Corpus, mode: str,
                   split: str, index: int) -> PosteriorMatrix:
    """Generate the posterior matrix for one utterance.

    mode "e2e" produces a CTC wordpiece matrix (blanks forced between
    repeated tokens, otherwise inserted with blank_prob; rare tokens
    degraded by delta); mode "phoneme" produces a frame-level phoneme
    matrix (pronunciations sampled by prior, optional silence spans,
    never degraded).
    """
    words = list(words)
    if not words:
        raise ValueError("empty transcript")
    if split not in _SPLIT_CODES:
        raise ValueError("unknown split %r" % split)
    if mode == "e2e":
        stream = SeededStream(
            config.seed, _DOMAIN_E2E, _SPLIT_CODES[split], index)
        vocab = corpus.wordpiece_vocab
        tokens = [vocab.id_of(WORD_BOUNDARY + w) for w in words]
        f_lo, f_hi = config.frames_per_symbol
        spans = []
        prev = None
        for tok in tokens:
            if prev is not None:
                if tok == prev:
                    spans.append((0, stream.randint(f_lo, f_hi), config.alpha))
                elif stream.uniform() < config.blank_prob:
                    spans.append((0, stream.randint(f_lo, f_hi), config.alpha))
            mass = config.alpha
            if tok in corpus.rare_token_ids:
                mass = config.alpha * (1.0 - config.delta)
            spans.append((tok, stream.randint(f_lo, f_hi), mass))
            prev = tok
        return _spans_to_matrix(spans, vocab, config, stream)
    if mode == "phoneme":
        stream = SeededStream(
            config.seed, _DOMAIN_PHONEME, _SPLIT_CODES[split], index)
        vocab = corpus.phoneme_vocab
        sil = corpus.silence_id
        f_lo, f_hi = config.frames_per_symbol
        spans = []
        if stream.uniform() < config.silence_prob:
            spans.append((sil, stream.randint(f_lo, f_hi), config.alpha))
        for i, word in enumerate(words):
            if i > 0 and stream.uniform() < config.silence_prob:
                spans.append((sil, stream.randint(f_lo, f_hi), config.alpha))
            prons = corpus.lexicon.pronunciations(word)
            priors = np.cumsum([prior for _, prior in prons])
            priors[-1] = 1.0
            phones, _ = prons[stream.choice(priors)]
            for ph in phones:
                spans.append((ph, stream.randint(f_lo, f_hi), config.alpha))
        if stream.uniform() < config.silence_prob:
            spans.append((sil, stream.randint(f_lo, f_hi), config.alpha))
        return _spans_to_matrix(spans, vocab, config, stream)
    raise ValueError("mode must be 'e2e' or 'phoneme'")
