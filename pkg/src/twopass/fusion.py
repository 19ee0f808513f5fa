"""Second pass: log-linear score fusion and N-best re-ranking.

fused = e2e + lambda_am * am + lambda_lm * lm - lambda_ilm * ilm

An AM-fusion configuration (lambda_am, lambda_lm, 0) ranks identically to
the LM/ILM configuration (0, lambda_lm/(1+lambda_am), lambda_am/(1+lambda_am))
whenever am = e2e - ilm; equivalent_lm_weights computes that mapping.
"""
from __future__ import annotations

from .core import (
    FusionWeights,
    Hypothesis,
    Lexicon,
    NBestList,
    PosteriorMatrix,
    ScoreBundle,
    Vocabulary,
    detokenize,
    with_am,
)
from .aligner import AlignOptions, am_score
from .metrics import ErrorCounts, wer
from .ngram import NGramModel


def fuse_scores(bundle: ScoreBundle, weights: FusionWeights) -> float:
    """Log-linear fused score of one hypothesis."""
    total = bundle.e2e
    if weights.lambda_am != 0.0:
        if bundle.am is None:
            raise ValueError("lambda_am > 0 but am score is missing")
        total += weights.lambda_am * bundle.am
    total += weights.lambda_lm * bundle.lm
    total -= weights.lambda_ilm * bundle.ilm
    return total


def equivalent_lm_weights(weights: FusionWeights) -> FusionWeights:
    """LM/ILM weights ranking-equivalent to an AM-fusion configuration.

    Valid when the fused AM score is the domain-invariant e2e - ilm and
    lambda_ilm is zero on input.
    """
    if weights.lambda_ilm != 0.0:
        raise ValueError("equivalent_lm_weights requires lambda_ilm == 0")
    denom = 1.0 + weights.lambda_am
    return FusionWeights(
        lambda_am=0.0,
        lambda_lm=weights.lambda_lm / denom,
        lambda_ilm=weights.lambda_am / denom)


def rank_hypotheses(hypotheses, weights: FusionWeights) -> list[Hypothesis]:
    """Sort by fused score, ties to the lexicographically smaller tokens."""
    return sorted(
        hypotheses,
        key=lambda h: (-fuse_scores(h.scores, weights), h.tokens))


def rescore_nbest(nbest: NBestList, posteriors: PosteriorMatrix,
                  lexicon: Lexicon, vocab: Vocabulary,
                  weights: FusionWeights,
                  options: AlignOptions = AlignOptions()) -> NBestList:
    """Fill am scores via forced alignment and re-rank by the fused score."""
    scored = [
        with_am(h, am_score(h, posteriors, lexicon, vocab, options))
        for h in nbest.hypotheses]
    return NBestList(nbest.utterance_id, tuple(rank_hypotheses(scored, weights)))


def score_with_word_lm(nbest: NBestList, lm: NGramModel,
                       vocab: Vocabulary, use_unk: bool = False) -> NBestList:
    """Replace each lm component with a word-level LM score.

    The hypothesis is detokenized and scored as a complete sentence (the
    end-of-sentence term included, unlike the first pass).
    """
    out = []
    for hyp in nbest.hypotheses:
        words = detokenize(hyp.tokens, vocab)
        lm_score = lm.score_sequence(words, include_eos=True, use_unk=use_unk)
        out.append(Hypothesis(
            hyp.tokens, ScoreBundle(
                e2e=hyp.scores.e2e, lm=lm_score, ilm=hyp.scores.ilm,
                am=hyp.scores.am)))
    return NBestList(nbest.utterance_id, tuple(out))


def default_weight_grid(step: float = 0.1, top: float = 1.0) -> list[FusionWeights]:
    """All weight triples on the step grid with at most two nonzero axes."""
    values = []
    v = 0.0
    while v <= top + 1e-9:
        values.append(round(v, 10))
        v += step
    grid = []
    for a in values:
        for l in values:
            for i in values:
                if sum(1 for x in (a, l, i) if x != 0.0) <= 2:
                    grid.append(FusionWeights(a, l, i))
    return grid


def grid_search(dev, grid, vocab: Vocabulary) -> list[tuple[FusionWeights, float]]:
    """Corpus WER of every grid point on a dev set, in grid order.

    dev is a sequence of (NBestList, reference word sequence) pairs whose
    lists already carry every score component a grid point needs.
    """
    dev = list(dev)
    grid = list(grid)
    if not grid:
        raise ValueError("empty weight grid")
    if not dev:
        raise ValueError("empty dev set")
    if sum(len(ref) for _, ref in dev) == 0:
        raise ValueError("dev references are empty")
    results = []
    for weights in grid:
        counts = ErrorCounts()
        for nbest, ref in dev:
            top = rank_hypotheses(nbest.hypotheses, weights)[0]
            counts = counts + wer(ref, detokenize(top.tokens, vocab))
        results.append((weights, counts.wer))
    return results


def tune_weights(dev, grid, vocab: Vocabulary) -> tuple[FusionWeights, float]:
    """Grid-search fusion weights for minimum corpus WER on a dev set.

    Returns (best weights, best corpus WER); ties prefer the
    lexicographically smaller (lambda_am, lambda_lm, lambda_ilm) triple.
    """
    best_weights = None
    best: tuple[float, tuple[float, float, float]] | None = None
    for weights, dev_wer in grid_search(dev, grid, vocab):
        key = (dev_wer,
               (weights.lambda_am, weights.lambda_lm, weights.lambda_ilm))
        if best is None or key < best:
            best = key
            best_weights = weights
    return best_weights, best[0]
