"""
Beam search and greedy decoding.

Both work against a step function mapping a list of partial hypotheses to
next-token log-probabilities, so they run against the report decoder or a
fixed table alike. Each step the live hypotheses are extended and the
`beam_size` best extensions by cumulative log-prob keep their slots; the
[EOS] ones among them retire to the finished pool. Search stops at K, when
no live hypothesis is left, or when the top extension is itself finished.
Finished hypotheses are ranked by mean per-token log-prob; ties go to the
lexicographically smaller id sequence.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Sequence, Tuple

import torch

from priorrg.errors import UsageError

logger = logging.getLogger(__name__)

StepFn = Callable[[List[List[int]]], torch.Tensor]


@dataclass
class GenerationResult:
    token_ids: List[int]
    token_logprobs: List[float] = field(default_factory=list)

    @property
    def total_logprob(self) -> float:
        return sum(self.token_logprobs)

    @property
    def score(self) -> float:
        return self.total_logprob / len(self.token_ids) if self.token_ids else 0.0

    def _rank(self) -> Tuple[float, Tuple[int, ...]]:
        return -self.score, tuple(self.token_ids)


def _step_rows(step: StepFn, hypotheses: List[List[int]], banned: Sequence[int]) -> List[List[float]]:
    """Next-token log-probs per hypothesis as float64 lists, banned ids at -inf"""
    logp = step(hypotheses).detach().double()
    if banned:
        logp[:, list(banned)] = float("-inf")
    return logp.tolist()


def beam_search(step: StepFn, vocab_size: int, eos_id: int, beam_size: int, max_len: int,
                banned: Iterable[int] = ()) -> GenerationResult:
    """Best finished hypothesis under `step`, or the best live one if none finished by K"""
    if beam_size < 1 or max_len < 1:
        raise UsageError(f"beam_size and max_len must be positive (got {beam_size}, {max_len})")
    if beam_size > vocab_size:
        raise UsageError(f"beam_size {beam_size} exceeds vocabulary size {vocab_size}")
    banned = sorted(set(banned))

    live = [GenerationResult(token_ids=[])]
    finished: List[GenerationResult] = []
    for _ in range(max_len):
        rows = _step_rows(step, [h.token_ids for h in live], banned)
        candidates = [GenerationResult(hyp.token_ids + [token], hyp.token_logprobs + [lp])
                      for hyp, row in zip(live, rows)
                      for token, lp in enumerate(row) if lp != float("-inf")]
        if not candidates:
            break
        candidates.sort(key=lambda h: (-h.total_logprob, tuple(h.token_ids)))
        kept = candidates[:beam_size]
        finished.extend(h for h in kept if h.token_ids[-1] == eos_id)
        live = [h for h in kept if h.token_ids[-1] != eos_id]
        # continuations only lose log-prob, so nothing live can pass the top entry
        if not live or kept[0].token_ids[-1] == eos_id:
            break

    pool = finished or live
    return min(pool, key=GenerationResult._rank)


def greedy_decode(step: StepFn, vocab_size: int, eos_id: int, max_len: int,
                  banned: Iterable[int] = ()) -> GenerationResult:
    """Argmax token per step until [EOS] or K; ties go to the lower id"""
    banned = set(banned)
    ids: List[int] = []
    logprobs: List[float] = []
    for _ in range(max_len):
        row = _step_rows(step, [ids], sorted(banned))[0]
        token = None
        for candidate in range(vocab_size):
            if row[candidate] == float("-inf"):
                continue
            if token is None or row[candidate] > row[token]:
                token = candidate
        if token is None:
            break
        ids = ids + [token]
        logprobs = logprobs + [row[token]]
        if token == eos_id:
            break
    return GenerationResult(ids, logprobs)


def model_step(decoder, prefix: torch.Tensor, segments: torch.Tensor) -> StepFn:
    """Step function for one study: prefix [1, m, d] is broadcast over the live hypotheses"""

    def step(hypotheses: List[List[int]]) -> torch.Tensor:
        ids = torch.tensor(hypotheses, dtype=torch.long).reshape(len(hypotheses), -1)
        logits = decoder.decode_step(prefix.expand(len(hypotheses), -1, -1), segments, ids)
        return torch.log_softmax(logits, dim=-1)

    return step
