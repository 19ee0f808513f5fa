"""First pass: CTC prefix beam search with external-LM shallow fusion and
internal-LM negation, plus an exact CTC label-sequence scorer.

Hypotheses are ranked by e2e + lambda_lm * lm - lambda_ilm * ilm. LM terms
are charged once per emitted token (never on blank or repeat-collapse) with
the history padded by a single sentence start; no end-of-sentence term is
added in this pass. Ties break toward the lexicographically smaller token-id
sequence. With a beam at least as wide as the number of live prefixes the
e2e score of every returned hypothesis is the exact CTC probability.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import (
    MINUS_INF,
    AlignmentError,
    Hypothesis,
    NBestList,
    PosteriorMatrix,
    ScoreBundle,
    FusionWeights,
    VocabMismatchError,
    log_add,
)
from .ngram import SENTENCE_START, NGramModel


@dataclass(frozen=True)
class BeamConfig:
    """Prefix beam search settings.

    lambda_am in weights is ignored here; acoustic-model fusion happens in
    the second pass. Attached LMs must cover every non-blank symbol of the
    posterior vocabulary.
    """

    beam_width: int = 8
    n_best: int | None = None
    weights: FusionWeights = FusionWeights()
    lm: NGramModel | None = None
    ilm: NGramModel | None = None

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.n_best is None:
            object.__setattr__(self, "n_best", min(10, self.beam_width))
        if self.n_best < 1 or self.n_best > self.beam_width:
            raise ValueError("n_best must be in 1..beam_width")
        if self.weights.lambda_lm > 0.0 and self.lm is None:
            raise ValueError("lambda_lm > 0 requires an external LM")
        if self.weights.lambda_ilm > 0.0 and self.ilm is None:
            raise ValueError("lambda_ilm > 0 requires an internal LM")


def _check_lm_coverage(model: NGramModel, symbols, what: str) -> None:
    missing = [s for s in symbols[1:] if s not in model.vocab]
    if missing:
        raise VocabMismatchError(
            "%s does not cover posterior symbols: %s" % (what, " ".join(missing)))


def prefix_beam_search(posteriors: PosteriorMatrix, config: BeamConfig,
                       utterance_id: str = "utt") -> NBestList:
    """Decode one utterance into an NBestList.

    Parameters
    ----------
    posteriors : PosteriorMatrix
        CTC log-posteriors; the vocabulary must carry blank at id 0.
    config : BeamConfig
        Beam width, N-best size, fusion weights and optional LM/ILM.

    Returns
    -------
    NBestList with 1..n_best unique hypotheses ranked by the fused
    first-pass score; each ScoreBundle carries e2e/lm/ilm, am stays None.
    """
    vocab = posteriors.vocab
    vocab.require_blank()
    syms = vocab.symbols
    lm, ilm = config.lm, config.ilm
    if lm is not None:
        _check_lm_coverage(lm, syms, "external LM")
    if ilm is not None:
        _check_lm_coverage(ilm, syms, "internal LM")
    w_lm = config.weights.lambda_lm
    w_ilm = config.weights.lambda_ilm
    n_symbols = len(syms)

    def fused(entry) -> float:
        return log_add(entry[0], entry[1]) + w_lm * entry[2] - w_ilm * entry[3]

    # prefix -> [log p(blank-ending), log p(nonblank-ending), lm, ilm]
    beams: dict[tuple[int, ...], list[float]] = {
        (): [0.0, MINUS_INF, 0.0, 0.0]}
    for t in range(posteriors.frames):
        row = posteriors.values[t].astype(float).tolist()
        nxt: dict[tuple[int, ...], list[float]] = {}
        for prefix, (p_b, p_nb, s_lm, s_ilm) in beams.items():
            total = log_add(p_b, p_nb)
            entry = nxt.get(prefix)
            if entry is None:
                entry = nxt[prefix] = [MINUS_INF, MINUS_INF, s_lm, s_ilm]
            entry[0] = log_add(entry[0], total + row[0])
            last = prefix[-1] if prefix else -1
            for c in range(1, n_symbols):
                if c == last:
                    # Repeat frames collapse into the same prefix; a genuine
                    # repeated label needs a blank in between, so only the
                    # blank-ending mass extends.
                    entry[1] = log_add(entry[1], p_nb + row[c])
                    contrib = p_b + row[c]
                else:
                    contrib = total + row[c]
                if contrib == MINUS_INF:
                    continue
                ext = prefix + (c,)
                child = nxt.get(ext)
                if child is None:
                    c_lm = s_lm
                    c_ilm = s_ilm
                    if lm is not None or ilm is not None:
                        ctx = (SENTENCE_START,) + tuple(syms[i] for i in prefix)
                        if lm is not None:
                            c_lm = s_lm + lm.conditional(ctx, syms[c])
                        if ilm is not None:
                            c_ilm = s_ilm + ilm.conditional(ctx, syms[c])
                    child = nxt[ext] = [MINUS_INF, MINUS_INF, c_lm, c_ilm]
                child[1] = log_add(child[1], contrib)
        if len(nxt) > config.beam_width:
            kept = sorted(nxt.items(), key=lambda kv: (-fused(kv[1]), kv[0]))
            beams = dict(kept[:config.beam_width])
        else:
            beams = nxt

    ranked = sorted(beams.items(), key=lambda kv: (-fused(kv[1]), kv[0]))
    hyps = []
    for prefix, (p_b, p_nb, s_lm, s_ilm) in ranked[:config.n_best]:
        hyps.append(Hypothesis(
            prefix, ScoreBundle(e2e=log_add(p_b, p_nb), lm=s_lm, ilm=s_ilm)))
    return NBestList(utterance_id, tuple(hyps))


def ctc_label_prob(posteriors: PosteriorMatrix, labels) -> float:
    """Exact log P(labels | posteriors): forward sum over all alignments.

    labels are non-blank token ids; raises AlignmentError when the sequence
    (plus blanks forced between repeats) cannot fit in the frame count.
    """
    labels = tuple(labels)
    t_frames = posteriors.frames
    n_symbols = posteriors.symbols
    for lab in labels:
        if lab == 0:
            raise ValueError("labels must not contain blank")
        if not (0 < lab < n_symbols):
            raise ValueError("label id %d out of range" % lab)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    if len(labels) + repeats > t_frames:
        raise AlignmentError("sequence too long to align")
    values = posteriors.values
    if not labels:
        return float(values[:, 0].astype(float).sum())
    # Expanded state sequence: blank, l1, blank, l2, ..., blank.
    expanded = [0]
    for lab in labels:
        expanded.extend((lab, 0))
    n_states = len(expanded)
    row = values[0].astype(float).tolist()
    alpha = [MINUS_INF] * n_states
    alpha[0] = row[0]
    alpha[1] = row[expanded[1]]
    for t in range(1, t_frames):
        row = values[t].astype(float).tolist()
        nxt = [MINUS_INF] * n_states
        for s in range(n_states):
            best = alpha[s]
            if s >= 1:
                best = log_add(best, alpha[s - 1])
            if s >= 2 and expanded[s] != 0 and expanded[s] != expanded[s - 2]:
                best = log_add(best, alpha[s - 2])
            if best != MINUS_INF:
                nxt[s] = best + row[expanded[s]]
        alpha = nxt
    return log_add(alpha[-1], alpha[-2])
