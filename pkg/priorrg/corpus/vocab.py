import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from priorrg.corpus.grammar import grammar_tokens
from priorrg.errors import DataError

logger = logging.getLogger(__name__)

PAD, BOS, EOS = "[PAD]", "[BOS]", "[EOS]"
INDICATION, HISTORY, FINDINGS = "[INDICATION]", "[HISTORY]", "[FINDINGS]"
SPECIALS = (PAD, BOS, EOS, INDICATION, HISTORY, FINDINGS)
PAD_ID, BOS_ID, EOS_ID, INDICATION_ID, HISTORY_ID, FINDINGS_ID = range(len(SPECIALS))

# Specials the decoder must never emit; EOS stays generable.
NON_GENERABLE_IDS = (PAD_ID, BOS_ID, INDICATION_ID, HISTORY_ID, FINDINGS_ID)


class Vocabulary:
    """Word-level token <-> id table with the specials pinned to ids 0-5"""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise DataError("Vocabulary must start with the special tokens in their fixed order")
        if len(set(tokens)) != len(tokens):
            raise DataError("Vocabulary contains duplicate tokens")
        self.tokens: List[str] = tokens
        self.ids: Dict[str, int] = {token: i for i, token in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def tokenize(self, text: str, strict: bool = True) -> List[int]:
        """
        Whitespace split and lookup. With strict=False an unknown word maps
        to the [PAD] id and a warning is logged instead of raising.
        """
        ids = []
        for word in text.split():
            if word in self.ids:
                ids.append(self.ids[word])
            elif strict:
                raise DataError(f"Out-of-vocabulary token '{word}'")
            else:
                logger.warning(f"Out-of-vocabulary token '{word}' mapped to {PAD}")
                ids.append(PAD_ID)
        return ids

    def detokenize(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise DataError(f"Token id {i} outside vocabulary of size {len(self.tokens)}")
            words.append(self.tokens[i])
        return " ".join(words)

    def decode_generated(self, ids: Sequence[int]) -> str:
        """Report text of a generated sequence, without its closing [EOS]"""
        ids = list(ids)
        if ids and ids[-1] == EOS_ID:
            ids = ids[:-1]
        return self.detokenize(ids)

    def save(self, path: Path) -> None:
        Path(path).write_text("".join(f"{token}\n" for token in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"Vocabulary file not found: {path}")
        return cls(path.read_text(encoding="utf-8").splitlines())


def build_vocabulary() -> Vocabulary:
    """Specials followed by the sorted grammar words"""
    return Vocabulary(list(SPECIALS) + sorted(grammar_tokens()))
