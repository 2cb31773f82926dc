"""Byte-level tokenizer: one token per UTF-8 byte plus BOS/EOS specials."""

from dataclasses import dataclass, field

BOS_ID = 256
EOS_ID = 257


@dataclass(frozen=True)
class TokenSequence:
    """Token ids with optional source text."""

    ids: tuple[int, ...] = field(default_factory=tuple)
    text: str | None = None

    def __len__(self) -> int:
        return len(self.ids)


def encode(text: str) -> list[int]:
    """Byte ids of ``text`` without any special token."""
    return list(text.encode("utf-8"))


def tokenize(text: str, add_bos: bool = True) -> TokenSequence:
    """Tokenize ``text`` one byte per token.

    Examples:
        >>> tokenize("AB").ids
        (256, 65, 66)
        >>> tokenize("").ids
        (256,)
    """
    ids = ([BOS_ID] if add_bos else []) + encode(text)
    return TokenSequence(ids=tuple(ids), text=text)


def detokenize(ids: TokenSequence | list[int] | tuple[int, ...]) -> str:
    """Decode byte ids back to text, dropping special tokens."""
    raw = ids.ids if isinstance(ids, TokenSequence) else ids
    return bytes(i for i in raw if i < 256).decode("utf-8", errors="replace")
