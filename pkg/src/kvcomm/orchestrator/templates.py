"""Prompt-template parsing under the placeholder naming grammar.

A template alternates fixed prefix text and placeholders::

    p_0 {phi_1} p_1 {phi_2} ... {phi_n} p_n

``p_0`` (usually the role's system prompt) is always present, possibly
empty, and adjacent placeholders get an empty prefix between them.
Placeholder names:

- ``{user_question}``
- ``{agent_<id>_current}`` and ``{agent_<id>_history_<t>}``
- ``{condition_<id>_current}`` and ``{condition_<id>_history_<t>}``

where ``<id>`` matches ``[A-Za-z0-9]+`` and ``<t>`` is a signed integer.
"""

import re
from dataclasses import dataclass
from enum import Enum

from kvcomm.errors import TemplateParseError

AGENT_ID_PATTERN = re.compile(r"[A-Za-z0-9]+")

_BRACED = re.compile(r"\{([^{}]*)\}")
_NAME = re.compile(
    r"(?:(?P<question>user_question)"
    r"|(?P<source>agent|condition)_(?P<id>[A-Za-z0-9]+)_"
    r"(?:(?P<current>current)|history_(?P<turn>-?\d+)))"
)


class PlaceholderKind(Enum):
    """What a placeholder is filled with."""

    USER_QUESTION = "user_question"
    AGENT_CURRENT = "agent_current"
    AGENT_HISTORY = "agent_history"
    CONDITION_CURRENT = "condition_current"
    CONDITION_HISTORY = "condition_history"

    @property
    def is_history(self) -> bool:
        return self in (
            PlaceholderKind.AGENT_HISTORY,
            PlaceholderKind.CONDITION_HISTORY,
        )

    @property
    def is_condition(self) -> bool:
        return self in (
            PlaceholderKind.CONDITION_CURRENT,
            PlaceholderKind.CONDITION_HISTORY,
        )


@dataclass(frozen=True)
class PlaceholderRef:
    """A parsed placeholder.

    Attributes:
        kind: Placeholder kind.
        source: Source agent id (empty for the user question).
        turn: History turn t (None for current/question kinds).
    """

    kind: PlaceholderKind
    source: str = ""
    turn: int | None = None

    @property
    def name(self) -> str:
        """The placeholder name as written inside the braces."""
        if self.kind is PlaceholderKind.USER_QUESTION:
            return "user_question"
        family = "condition" if self.kind.is_condition else "agent"
        if self.kind.is_history:
            return f"{family}_{self.source}_history_{self.turn}"
        return f"{family}_{self.source}_current"

    @property
    def rendered(self) -> str:
        return "{" + self.name + "}"


@dataclass(frozen=True)
class ParsedTemplate:
    """Alternating prefix texts and placeholders.

    ``len(prefixes) == len(placeholders) + 1`` always holds.
    """

    prefixes: tuple[str, ...]
    placeholders: tuple[PlaceholderRef, ...]

    @property
    def segments(self) -> list[str | PlaceholderRef]:
        """Interleaved segments p_0, phi_1, p_1, ..., phi_n, p_n."""
        out: list[str | PlaceholderRef] = [self.prefixes[0]]
        for ref, prefix in zip(self.placeholders, self.prefixes[1:]):
            out.extend([ref, prefix])
        return out

    def render(self) -> str:
        return "".join(
            s if isinstance(s, str) else s.rendered for s in self.segments
        )


def parse_placeholder(name: str) -> PlaceholderRef:
    """Parse a placeholder name (without braces).

    Raises:
        TemplateParseError: If ``name`` is outside the grammar.
    """
    match = _NAME.fullmatch(name)
    if match is None:
        raise TemplateParseError(
            f"Unknown placeholder {{{name}}}", token="{" + name + "}"
        )
    if match.group("question"):
        return PlaceholderRef(PlaceholderKind.USER_QUESTION)
    condition = match.group("source") == "condition"
    if match.group("current"):
        if condition:
            return PlaceholderRef(PlaceholderKind.CONDITION_CURRENT, match.group("id"))
        return PlaceholderRef(PlaceholderKind.AGENT_CURRENT, match.group("id"))
    if condition:
        kind = PlaceholderKind.CONDITION_HISTORY
    else:
        kind = PlaceholderKind.AGENT_HISTORY
    return PlaceholderRef(kind, match.group("id"), int(match.group("turn")))


def _check_stray_braces(text: str) -> None:
    for brace in "{}":
        if brace in text:
            raise TemplateParseError(
                f"Unbalanced brace {brace!r} in template text {text!r}", token=brace
            )


def parse_template(text: str) -> ParsedTemplate:
    """Split a template into prefixes and placeholders.

    Examples:
        >>> t = parse_template("Hello {user_question} bye")
        >>> t.prefixes
        ('Hello ', ' bye')
        >>> t.placeholders[0].name
        'user_question'

    Raises:
        TemplateParseError: On unbalanced braces or an unknown placeholder;
            the error's ``token`` names the offending text.
    """
    prefixes: list[str] = []
    placeholders: list[PlaceholderRef] = []
    cursor = 0
    for match in _BRACED.finditer(text):
        literal = text[cursor : match.start()]
        _check_stray_braces(literal)
        prefixes.append(literal)
        placeholders.append(parse_placeholder(match.group(1)))
        cursor = match.end()
    tail = text[cursor:]
    _check_stray_braces(tail)
    prefixes.append(tail)
    return ParsedTemplate(tuple(prefixes), tuple(placeholders))
