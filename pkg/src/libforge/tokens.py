"""Token counting under named tokenizers.

Two tokenizers ship with the package:

  ``ref-model``  greedy longest-match over a committed vocabulary file,
                 standing in for the scoring model's vocabulary so token
                 counts and description-length scores share one unit of
                 discretization. The vocabulary path can be overridden via
                 ``load_ref_vocab``.
  ``fallback``   whitespace+punctuation split, for offline sanity checks.

Both are deterministic pure functions of the input text.
"""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

from .errors import UnknownTokenizer

FALLBACK = "fallback"
REF_MODEL = "ref-model"

_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]")


class FallbackTokenizer:
    """Words (\\w+ runs) and individual punctuation marks; whitespace dropped."""

    def tokenize(self, text: str) -> list[str]:
        return _WORD_OR_PUNCT.findall(text)


class VocabTokenizer:
    """Greedy longest-match against a fixed vocabulary.

    Characters not covered by any vocabulary entry become single-character
    tokens, so every input is tokenizable.
    """

    def __init__(self, vocab: list[str]):
        self._by_first: dict[str, list[str]] = {}
        for tok in vocab:
            if not tok:
                continue
            self._by_first.setdefault(tok[0], []).append(tok)
        for toks in self._by_first.values():
            toks.sort(key=len, reverse=True)
        self.max_len = max((len(t) for t in vocab), default=1)

    def tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        i, n = 0, len(text)
        while i < n:
            candidates = self._by_first.get(text[i])
            matched = None
            if candidates:
                for tok in candidates:
                    if text.startswith(tok, i):
                        matched = tok
                        break
            if matched is None:
                matched = text[i]
            out.append(matched)
            i += len(matched)
        return out


def _load_builtin_vocab() -> list[str]:
    data = resources.files("libforge.data").joinpath("ref_vocab.json").read_text("utf-8")
    return json.loads(data)["tokens"]


_REGISTRY: dict[str, object] = {}


def _registry() -> dict:
    if not _REGISTRY:
        _REGISTRY[FALLBACK] = FallbackTokenizer()
        _REGISTRY[REF_MODEL] = VocabTokenizer(_load_builtin_vocab())
    return _REGISTRY


def get_tokenizer(name: str = REF_MODEL):
    reg = _registry()
    if name not in reg:
        raise UnknownTokenizer(name)
    return reg[name]


def load_ref_vocab(path: str | Path) -> None:
    """Replace the ref-model vocabulary with one loaded from `path`."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    _registry()[REF_MODEL] = VocabTokenizer(raw["tokens"])


def register_tokenizer(name: str, tokenizer) -> None:
    _registry()[name] = tokenizer


def count_tokens(text: str, tokenizer: str = REF_MODEL) -> int:
    """Number of tokens of `text` under the named tokenizer."""
    return len(get_tokenizer(tokenizer).tokenize(text))
