"""Token vocabulary, special tokens and the control-token registry."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .rewards import RewardSpec

VOCAB_FORMAT_VERSION = 1

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
DELIM = "<ans>"
SPECIAL_ROLES = ("pad", "bos", "eos", "delim")
SPECIAL_TOKENS = {"pad": PAD, "bos": BOS, "eos": EOS, "delim": DELIM}


class VocabError(ValueError):
    pass


def control_token_name(reward: str, bin_index: int) -> str:
    return f"<R={reward}:{bin_index}>"


@dataclass(frozen=True)
class ControlTokenTable:
    """Maps ``(reward name, bin index)`` to a token id. Bin 1 is the best bin."""

    entries: dict[tuple[str, int], int]
    reward_order: tuple[str, ...]
    bins: dict[str, int]

    def __getitem__(self, key: tuple[str, int]) -> int:
        try:
            return self.entries[key]
        except KeyError:
            raise KeyError(f"no control token for reward={key[0]!r} bin={key[1]}") from None

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> set[int]:
        return set(self.entries.values())

    def best(self, reward: str) -> int:
        return self[(reward, 1)]

    def worst(self, reward: str) -> int:
        return self[(reward, self.bins[reward])]


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list. Ids are list positions and never change once built.

    Layout is ``content tokens | special tokens | control tokens``.
    """

    tokens: tuple[str, ...]
    n_content: int
    control: ControlTokenTable = field(
        default_factory=lambda: ControlTokenTable({}, (), {})
    )
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise VocabError("token strings must be unique")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabError(f"unknown token {token!r}") from None

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def bos_id(self) -> int:
        return self._index[BOS]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def delim_id(self) -> int:
        return self._index[DELIM]

    @property
    def special(self) -> dict[str, str]:
        return dict(SPECIAL_TOKENS)

    def content_ids(self) -> range:
        return range(self.n_content)

    def special_ids(self) -> set[int]:
        return {self._index[t] for t in SPECIAL_TOKENS.values()}

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise VocabError(f"token id {i} out of range [0, {len(self.tokens)})")
            out.append(self.tokens[i])
        return out

    def with_control_tokens(self, rewards: Sequence["RewardSpec"]) -> "Vocabulary":
        """Return a new vocabulary with control tokens appended for ``rewards``."""
        if self.control.entries:
            raise VocabError("control tokens already registered")
        names = [r.name for r in rewards]
        if len(set(names)) != len(names):
            raise VocabError(f"duplicate reward names in {names}")
        tokens = list(self.tokens)
        entries: dict[tuple[str, int], int] = {}
        bins: dict[str, int] = {}
        for spec in rewards:
            if spec.bins < 2:
                raise VocabError(f"reward {spec.name!r} needs at least 2 bins, got {spec.bins}")
            bins[spec.name] = spec.bins
            for k in range(1, spec.bins + 1):
                entries[(spec.name, k)] = len(tokens)
                tokens.append(control_token_name(spec.name, k))
        table = ControlTokenTable(entries, tuple(names), bins)
        return Vocabulary(tuple(tokens), self.n_content, table)

    def to_json(self) -> dict:
        return {
            "version": VOCAB_FORMAT_VERSION,
            "content": list(self.tokens[: self.n_content]),
            "special": dict(SPECIAL_TOKENS),
            "control": {
                "order": list(self.control.reward_order),
                "bins": {name: self.control.bins[name] for name in self.control.reward_order},
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        if doc.get("version") != VOCAB_FORMAT_VERSION:
            raise VocabError(f"unsupported vocabulary version {doc.get('version')!r}")
        if doc["special"] != SPECIAL_TOKENS:
            raise VocabError("special token set does not match this build")
        tokens = tuple(doc["content"]) + tuple(SPECIAL_TOKENS[r] for r in SPECIAL_ROLES)
        vocab = cls(tokens, len(doc["content"]))
        control = doc.get("control") or {}
        order = control.get("order", [])
        if order:
            from .rewards import RewardSpec

            specs = [RewardSpec(name, (0.0, 1.0), int(control["bins"][name])) for name in order]
            vocab = vocab.with_control_tokens(specs)
        return vocab

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_vocab(corpus: Sequence[Sequence[str]]) -> Vocabulary:
    """Collect content tokens in first-seen order and append the special tokens."""
    seen: dict[str, None] = {}
    for seq in corpus:
        for tok in seq:
            if tok in SPECIAL_TOKENS.values() or tok.startswith("<R="):
                raise VocabError(f"reserved token {tok!r} found in corpus")
            seen.setdefault(tok, None)
    if not seen:
        raise VocabError("corpus has no content tokens")
    tokens = tuple(seen) + tuple(SPECIAL_TOKENS[r] for r in SPECIAL_ROLES)
    return Vocabulary(tokens, len(seen))


def register_control_tokens(vocab: Vocabulary, rewards: Sequence["RewardSpec"]) -> Vocabulary:
    """Allocate ``sum(K_j)`` fresh control-token ids, grouped by reward, bin 1 first."""
    return vocab.with_control_tokens(rewards)
