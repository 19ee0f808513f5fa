"""Backoff n-gram language model: ARPA reading/writing, scoring, perplexity.

ARPA files store log10 probabilities; everything is converted to natural log
at load time and stays natural log in memory. Scoring pads the history with a
single sentence-start symbol and never emits a probability for it.
"""
from __future__ import annotations

import math
import os
import re
from collections import Counter

from .core import FormatError, OOVError

SENTENCE_START = "<s>"
SENTENCE_END = "</s>"
UNKNOWN = "<unk>"

LN10 = math.log(10.0)

# log10 probability conventionally given to symbols that must exist but never
# be predicted (the sentence-start symbol).
_NEVER_PREDICTED_LOG10 = -99.0


class NGramModel:
    """Backoff n-gram model over token strings, natural-log internals."""

    def __init__(self, order: int, tables: list[dict]) -> None:
        if order < 1 or len(tables) != order:
            raise ValueError("tables must cover orders 1..order")
        self.order = order
        # tables[k-1]: dict mapping k-tuples of tokens to (logprob, backoff).
        self._tables = tables
        self.vocab = frozenset(key[0] for key in tables[0])

    @property
    def has_unk(self) -> bool:
        return UNKNOWN in self.vocab

    def conditional(self, context: tuple[str, ...], token: str,
                    use_unk: bool = False) -> float:
        """Natural-log P(token | context) resolved with backoff.

        context may be any length; only the last order-1 symbols are used.
        Unknown tokens raise OOVError unless use_unk is set and the model
        has an <unk> entry to map them to.
        """
        if token not in self.vocab:
            if use_unk and self.has_unk:
                token = UNKNOWN
            else:
                raise OOVError("token not in LM vocabulary: %s" % token)
        if self.order > 1:
            ctx = tuple(context[-(self.order - 1):])
        else:
            ctx = ()
        acc = 0.0
        while True:
            entry = self._tables[len(ctx)].get(ctx + (token,))
            if entry is not None:
                return acc + entry[0]
            if not ctx:
                # The unigram exists (vocab membership checked above).
                raise AssertionError("unigram table missing %r" % token)
            bow = self._tables[len(ctx) - 1].get(ctx)
            if bow is not None:
                acc += bow[1]
            ctx = ctx[1:]

    def score_sequence(self, tokens, include_eos: bool = False,
                       use_unk: bool = False) -> float:
        """Total natural-log probability of a token sequence.

        History starts at <s>; with include_eos the </s> term is added.
        """
        history: list[str] = [SENTENCE_START]
        total = 0.0
        for token in tokens:
            total += self.conditional(tuple(history), token, use_unk=use_unk)
            history.append(token)
        if include_eos:
            total += self.conditional(tuple(history), SENTENCE_END, use_unk=use_unk)
        return total

    def perplexity(self, tokens, use_unk: bool = False) -> float:
        """exp(-score / (len + 1)) with the end-of-sentence term included."""
        score = self.score_sequence(tokens, include_eos=True, use_unk=use_unk)
        return math.exp(-score / (len(list(tokens)) + 1))

    def ngrams(self, k: int) -> dict:
        """The raw (logprob, backoff) table for k-grams (natural log)."""
        return self._tables[k - 1]


_COUNT_RE = re.compile(r"^ngram (\d+)=(\d+)$")


def load_arpa(path: str | os.PathLike) -> NGramModel:
    """Parse an ARPA file into an NGramModel.

    Checks: declared counts match section contents, every higher-order gram's
    context exists at the next order down, log10 probabilities are <= 0, no
    duplicate grams. Backoff weights default to 0 (log) when absent.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    pos = 0
    n = len(lines)
    while pos < n and lines[pos].strip() != "\\data\\":
        if lines[pos].strip():
            raise FormatError("%s: expected \\data\\ header" % path)
        pos += 1
    if pos == n:
        raise FormatError("%s: missing \\data\\ header" % path)
    pos += 1
    counts: dict[int, int] = {}
    while pos < n:
        line = lines[pos].strip()
        if not line:
            pos += 1
            continue
        m = _COUNT_RE.match(line)
        if not m:
            break
        k = int(m.group(1))
        if k != len(counts) + 1:
            raise FormatError("%s: non-consecutive ngram counts" % path)
        counts[k] = int(m.group(2))
        pos += 1
    if not counts:
        raise FormatError("%s: no ngram counts declared" % path)
    order = max(counts)
    tables: list[dict] = [dict() for _ in range(order)]
    seen_sections = 0
    saw_end = False
    while pos < n:
        line = lines[pos].strip()
        if not line:
            pos += 1
            continue
        if line == "\\end\\":
            saw_end = True
            break
        m = re.match(r"^\\(\d+)-grams:$", line)
        if not m:
            raise FormatError("%s: line %d: unexpected line %r" % (path, pos + 1, line))
        k = int(m.group(1))
        if k != seen_sections + 1 or k > order:
            raise FormatError("%s: sections out of order" % path)
        seen_sections = k
        pos += 1
        while pos < n:
            line = lines[pos].strip()
            if not line:
                pos += 1
                continue
            if line.startswith("\\"):
                break
            fields = line.split()
            if len(fields) == k + 1:
                bow10 = 0.0
            elif len(fields) == k + 2:
                try:
                    bow10 = float(fields[-1])
                except ValueError:
                    raise FormatError(
                        "%s: line %d: malformed line" % (path, pos + 1)) from None
                fields = fields[:-1]
            else:
                raise FormatError("%s: line %d: malformed line" % (path, pos + 1))
            try:
                logp10 = float(fields[0])
            except ValueError:
                raise FormatError("%s: line %d: malformed line" % (path, pos + 1)) from None
            if logp10 > 0.0:
                raise FormatError(
                    "%s: line %d: positive log-probability" % (path, pos + 1))
            gram = tuple(fields[1:])
            if gram in tables[k - 1]:
                raise FormatError("%s: line %d: duplicate n-gram" % (path, pos + 1))
            if k > 1 and gram[:-1] not in tables[k - 2]:
                raise FormatError(
                    "%s: line %d: n-gram referencing unseen context" % (path, pos + 1))
            tables[k - 1][gram] = (logp10 * LN10, bow10 * LN10)
            pos += 1
    if not saw_end:
        raise FormatError("%s: missing \\end\\ marker" % path)
    if seen_sections != order:
        raise FormatError("%s: missing n-gram sections" % path)
    for k in range(1, order + 1):
        if len(tables[k - 1]) != counts[k]:
            raise FormatError(
                "%s: %d-gram count mismatch (declared %d, found %d)"
                % (path, k, counts[k], len(tables[k - 1])))
    return NGramModel(order, tables)


def write_arpa(model: NGramModel, path: str | os.PathLike) -> None:
    """Write the model in ARPA format (log10, 7 decimals, sorted grams)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for k in range(1, model.order + 1):
            fh.write("ngram %d=%d\n" % (k, len(model.ngrams(k))))
        for k in range(1, model.order + 1):
            fh.write("\n\\%d-grams:\n" % k)
            for gram in sorted(model.ngrams(k)):
                logp, bow = model.ngrams(k)[gram]
                line = "%.7f\t%s" % (logp / LN10, " ".join(gram))
                if bow != 0.0:
                    line += "\t%.7f" % (bow / LN10)
                fh.write(line + "\n")
        fh.write("\n\\end\\\n")


def train_add_one(sentences, order: int, vocabulary=None) -> NGramModel:
    """Minimal add-one count-based backoff model over token strings.

    Each sentence is padded with one <s> and one </s>. Seen k-grams get
    (count+1)/(context_total+V) probabilities; backoff weights are computed
    so every conditional distribution sums to exactly 1 over the predicted
    vocabulary (all real tokens plus </s>, never <s>).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sentences = [list(s) for s in sentences]
    predicted: set[str] = set()
    for sent in sentences:
        for tok in sent:
            if tok in (SENTENCE_START, SENTENCE_END):
                raise ValueError("sentence contains reserved symbol %r" % tok)
            predicted.add(tok)
    if vocabulary is not None:
        for tok in vocabulary:
            if tok not in (SENTENCE_START, SENTENCE_END):
                predicted.add(tok)
    if not predicted:
        raise ValueError("no tokens to train on")
    predicted.add(SENTENCE_END)
    vsize = len(predicted)

    counts: list[Counter] = [Counter() for _ in range(order)]
    for sent in sentences:
        seq = [SENTENCE_START] + sent + [SENTENCE_END]
        for k in range(1, order + 1):
            for i in range(len(seq) - k + 1):
                gram = tuple(seq[i:i + k])
                if gram[-1] == SENTENCE_START:
                    continue
                counts[k - 1][gram] += 1

    # Probabilities. Context totals are continuation sums, not standalone
    # counts, so sentence-final contexts stay consistent.
    probs: list[dict] = [dict() for _ in range(order)]
    ctx_totals: list[Counter] = [Counter() for _ in range(order)]
    for k in range(2, order + 1):
        for gram, c in counts[k - 1].items():
            ctx_totals[k - 1][gram[:-1]] += c
    total_tokens = sum(counts[0].values())
    for tok in sorted(predicted):
        probs[0][(tok,)] = (counts[0][(tok,)] + 1) / (total_tokens + vsize)
    for k in range(2, order + 1):
        for gram, c in sorted(counts[k - 1].items()):
            probs[k - 1][gram] = (c + 1) / (ctx_totals[k - 1][gram[:-1]] + vsize)

    # Backoff weights for every context that has continuations.
    bows: list[dict] = [dict() for _ in range(order)]
    for k in range(2, order + 1):
        by_ctx: dict[tuple, list] = {}
        for gram in probs[k - 1]:
            by_ctx.setdefault(gram[:-1], []).append(gram[-1])
        for ctx, toks in by_ctx.items():
            seen_hi = sum(probs[k - 1][ctx + (t,)] for t in toks)
            seen_lo = sum(probs[k - 2][ctx[1:] + (t,)] for t in toks)
            num = 1.0 - seen_hi
            den = 1.0 - seen_lo
            if den <= 1e-12 or num <= 1e-12:
                bows[k - 2][ctx] = 1.0
            else:
                bows[k - 2][ctx] = num / den

    tables: list[dict] = [dict() for _ in range(order)]
    for tok in sorted(predicted):
        gram = (tok,)
        bow = bows[0].get(gram, 1.0) if order > 1 else 1.0
        tables[0][gram] = (math.log(probs[0][gram]), math.log(bow))
    # <s> exists only as context; conventional tiny probability.
    sos = (SENTENCE_START,)
    bow = bows[0].get(sos, 1.0) if order > 1 else 1.0
    tables[0][sos] = (_NEVER_PREDICTED_LOG10 * LN10, math.log(bow))
    for k in range(2, order + 1):
        for gram in sorted(probs[k - 1]):
            bow = bows[k - 1].get(gram, 1.0) if k < order else 1.0
            tables[k - 1][gram] = (math.log(probs[k - 1][gram]), math.log(bow))
    return NGramModel(order, tables)
