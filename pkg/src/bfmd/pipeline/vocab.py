from __future__ import annotations

import json
import re
from collections import Counter
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
PLAYER = "[PLAYER]"

_TOKEN_RE = re.compile(r"\[player\]|\w+(?:[-']\w+)*|[^\w\s]")
_ATTACH_LEFT = set(".,;:!?)]}%")


def normalize_text(text: str) -> str:
    """Lowercase with the player placeholder kept in its canonical form."""
    return re.sub(r"\[player\]", PLAYER, text.lower())


def split_words(text: str) -> list[str]:
    """Caption -> surface tokens: lowercased, punctuation detached, [PLAYER] intact."""
    return [PLAYER if t == "[player]" else t for t in _TOKEN_RE.findall(text.lower())]


class Vocabulary:
    """Token <-> id map with PAD/BOS/EOS/UNK reserved at ids 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @classmethod
    def build(cls, captions: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter(t for c in captions for t in split_words(c))
        ranked = sorted((t for t, n in counts.items() if n >= min_count), key=lambda t: (-counts[t], t))
        return cls([PLAYER, *ranked])

    def tokenize(self, caption: str, max_len: int | None = None) -> list[int]:
        ids = [BOS, *(self.stoi.get(t, UNK) for t in split_words(caption)), EOS]
        if max_len is not None and len(ids) > max_len:
            ids = ids[: max_len - 1] + [EOS]
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        out: list[str] = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS):
                continue
            if i == EOS:
                break
            tok = self.itos[i] if 0 <= i < len(self.itos) else SPECIALS[UNK]
            if out and len(tok) == 1 and tok in _ATTACH_LEFT:
                out[-1] += tok
            else:
                out.append(tok)
        return " ".join(out)

    def words(self, ids: Sequence[int]) -> list[str]:
        """Surface tokens without specials; the metrics operate on these."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_json(self) -> str:
        return json.dumps({"itos": self.itos}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        itos = json.loads(text)["itos"]
        if tuple(itos[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved specials")
        return cls(itos[4:])
