"""Bijective serialization of vector maps to a bracketed special-token string.

Wire format, per line object (lines joined by <,>):

    <{><points><:><[> <[><x><,><y><]> ... <]>
    <,><category><:><CatToken><,><line_type><:><TypeToken>
    <,><start><:><KindToken><,><end><:><KindToken><}>

Point groups are joined by <,>. Coordinates are rounded half-up to
integers at serialization; geometry stays continuous everywhere else.
The rendered string is the byte-exact wire format exchanged with
external generators; it contains no whitespace.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Iterable

from .model import (
    EndpointKind,
    GeometryError,
    LineCategory,
    LineRecord,
    LineType,
    Point2,
    VectorMap,
)

STRUCTURAL_TOKENS = ("<{>", "<}>", "<[>", "<]>", "<,>", "<:>")
KEYWORD_TOKENS = ("<points>", "<category>", "<line_type>", "<start>", "<end>")

_CATEGORY_TOKEN = {c: f"<{c.value}>" for c in LineCategory}
_TYPE_TOKEN = {t: f"<{t.value}>" for t in LineType}
_KIND_TOKEN = {k: f"<{k.value}>" for k in EndpointKind}
_CATEGORY_BY_TOKEN = {v: k for k, v in _CATEGORY_TOKEN.items()}
_TYPE_BY_TOKEN = {v: k for k, v in _TYPE_TOKEN.items()}
_KIND_BY_TOKEN = {v: k for k, v in _KIND_TOKEN.items()}

_TOKEN_RE = re.compile(r"<[^<>]*>")


class CodecError(ValueError):
    """Base class for serialization/detokenization errors."""


class CoordinateRangeError(CodecError):
    """A rounded coordinate fell outside [0, max_coord]."""

    def __init__(self, line_id: str, point_index: int, value: int, max_coord: int):
        super().__init__(
            f"line {line_id!r} point {point_index}: coordinate {value} "
            f"outside [0, {max_coord}]"
        )
        self.line_id = line_id
        self.point_index = point_index
        self.value = value


class UnknownTokenError(CodecError):
    """The surface string contains a chunk that is not in the vocabulary."""

    def __init__(self, position: int, surface: str):
        super().__init__(f"unknown token {surface!r} at position {position}")
        self.position = position
        self.surface = surface


class ParseError(CodecError):
    """Strict-mode parse failure, with token index and the expected set."""

    def __init__(self, token_index: int, expected: frozenset[str], found: str, note: str = ""):
        exp = ", ".join(sorted(expected)) or "<end>"
        msg = f"token {token_index}: expected one of {{{exp}}}, found {found!r}"
        if note:
            msg += f" ({note})"
        super().__init__(msg)
        self.token_index = token_index
        self.expected = expected
        self.found = found


@dataclass(frozen=True)
class Diagnostic:
    """One recovery event from lenient detokenization."""

    token_index: int
    message: str


@dataclass(frozen=True)
class Vocabulary:
    """The closed token vocabulary: structure, keywords, attribute values and
    one token per integer coordinate in [0, max_coord]."""

    max_coord: int = 895

    def __post_init__(self):
        if self.max_coord < 0:
            raise ValueError("max_coord must be >= 0")
        coord = {f"<{i}>": i for i in range(self.max_coord + 1)}
        words = set(STRUCTURAL_TOKENS) | set(KEYWORD_TOKENS)
        words |= set(_CATEGORY_BY_TOKEN) | set(_TYPE_BY_TOKEN) | set(_KIND_BY_TOKEN)
        if words & coord.keys():
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "_coord_value", coord)
        object.__setattr__(self, "_all_tokens", frozenset(words) | frozenset(coord))

    @property
    def tokens(self) -> frozenset[str]:
        return self._all_tokens

    def coord_token(self, value: int) -> str:
        return f"<{value}>"

    def coord_value(self, token: str) -> int | None:
        return self._coord_value.get(token)

    def __contains__(self, token: str) -> bool:
        return token in self._all_tokens


@dataclass(frozen=True)
class TokenSequence:
    """An ordered token list plus its concatenated surface string."""

    tokens: tuple[str, ...]
    rendered: str

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "TokenSequence":
        toks = tuple(tokens)
        return cls(tokens=toks, rendered="".join(toks))


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def serialize_map(m: VectorMap, vocab: Vocabulary = Vocabulary()) -> TokenSequence:
    """Serialize an already resampled and reordered map (caller contract)."""
    toks: list[str] = []
    append = toks.append
    max_coord = vocab.max_coord
    for li, line in enumerate(m.lines):
        if li:
            append("<,>")
        append("<{>")
        append("<points>")
        append("<:>")
        append("<[>")
        for pi, p in enumerate(line.points):
            xi = _round_half_up(p.x)
            yi = _round_half_up(p.y)
            if not (0 <= xi <= max_coord):
                raise CoordinateRangeError(line.id, pi, xi, max_coord)
            if not (0 <= yi <= max_coord):
                raise CoordinateRangeError(line.id, pi, yi, max_coord)
            if pi:
                append("<,>")
            append("<[>")
            append(f"<{xi}>")
            append("<,>")
            append(f"<{yi}>")
            append("<]>")
        append("<]>")
        append("<,>")
        append("<category>")
        append("<:>")
        append(_CATEGORY_TOKEN[line.category])
        append("<,>")
        append("<line_type>")
        append("<:>")
        append(_TYPE_TOKEN[line.line_type])
        append("<,>")
        append("<start>")
        append("<:>")
        append(_KIND_TOKEN[line.start_kind])
        append("<,>")
        append("<end>")
        append("<:>")
        append(_KIND_TOKEN[line.end_kind])
        append("<}>")
    return TokenSequence.from_tokens(toks)


def tokenize_raw(surface: str, vocab: Vocabulary = Vocabulary()) -> TokenSequence:
    """Greedy longest-match segmentation of a surface string.

    Every vocabulary token is bracket-delimited, which makes the token set
    prefix-free, so matching each <...> chunk is the longest match.
    """
    tokens: list[str] = []
    pos = 0
    n = len(surface)
    for match in _TOKEN_RE.finditer(surface):
        if match.start() != pos:
            raise UnknownTokenError(pos, surface[pos : match.start()])
        tok = match.group(0)
        if tok not in vocab:
            raise UnknownTokenError(pos, tok)
        tokens.append(tok)
        pos = match.end()
    if pos != n:
        raise UnknownTokenError(pos, surface[pos:])
    return TokenSequence.from_tokens(tokens)


def _lex_lenient(surface: str, vocab: Vocabulary) -> tuple[list[str], list[Diagnostic]]:
    tokens: list[str] = []
    diagnostics: list[Diagnostic] = []
    pos = 0
    for match in _TOKEN_RE.finditer(surface):
        if match.start() != pos:
            diagnostics.append(
                Diagnostic(len(tokens), f"skipped unlexable text {surface[pos:match.start()]!r}")
            )
        tok = match.group(0)
        if tok in vocab:
            tokens.append(tok)
        else:
            diagnostics.append(Diagnostic(len(tokens), f"skipped unknown token {tok!r}"))
        pos = match.end()
    if pos != len(surface):
        diagnostics.append(Diagnostic(len(tokens), f"skipped trailing text {surface[pos:]!r}"))
    return tokens, diagnostics


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, tokens: list[str], vocab: Vocabulary, strict: bool):
        self.toks = tokens
        self.vocab = vocab
        self.strict = strict
        self.pos = 0

    def _fail(self, expected: set[str], note: str = "") -> ParseError:
        found = self.toks[self.pos] if self.pos < len(self.toks) else "<end-of-input>"
        return ParseError(self.pos, frozenset(expected), found, note)

    def _expect(self, token: str):
        if self.pos >= len(self.toks) or self.toks[self.pos] != token:
            raise self._fail({token})
        self.pos += 1

    def _peek(self) -> str | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def _coord(self) -> int:
        tok = self._peek()
        value = self.vocab.coord_value(tok) if tok is not None else None
        if value is None:
            raise self._fail({"<coordinate>"})
        self.pos += 1
        return value

    def _point(self) -> Point2:
        self._expect("<[>")
        x = self._coord()
        self._expect("<,>")
        y = self._coord()
        self._expect("<]>")
        return Point2(float(x), float(y))

    def _value(self, table: dict, what: str):
        tok = self._peek()
        if tok not in table:
            raise self._fail(set(table), f"expected a {what} value")
        self.pos += 1
        return table[tok]

    def _line_object(self, index: int) -> LineRecord:
        start_index = self.pos
        self._expect("<{>")
        self._expect("<points>")
        self._expect("<:>")
        self._expect("<[>")
        points: list[Point2] = []
        if self._peek() == "<[>":
            points.append(self._point())
            while self._peek() == "<,>" and self.pos + 1 < len(self.toks) and self.toks[self.pos + 1] == "<[>":
                self.pos += 1
                points.append(self._point())
        self._expect("<]>")

        category: LineCategory | None = None
        line_type: LineType | None = None
        start_kind = end_kind = None
        for keyword, table in (
            ("<category>", _CATEGORY_BY_TOKEN),
            ("<line_type>", _TYPE_BY_TOKEN),
            ("<start>", _KIND_BY_TOKEN),
            ("<end>", _KIND_BY_TOKEN),
        ):
            if self._peek() == "<,>" and self.pos + 1 < len(self.toks) and self.toks[self.pos + 1] == keyword:
                self.pos += 2
                self._expect("<:>")
                value = self._value(table, keyword.strip("<>"))
                if keyword == "<category>":
                    category = value
                elif keyword == "<line_type>":
                    line_type = value
                elif keyword == "<start>":
                    start_kind = value
                else:
                    end_kind = value
            elif self.strict:
                raise self._fail({"<,>"}, f"missing {keyword} attribute")
        self._expect("<}>")

        if category is None or line_type is None:
            raise ParseError(
                start_index,
                frozenset({"<category>", "<line_type>"}),
                "<}>",
                "line object missing category/line_type",
            )
        if not self.strict:
            deduped = [points[0]] if points else []
            for p in points[1:]:
                if p != deduped[-1]:
                    deduped.append(p)
            points = deduped
        try:
            return LineRecord(
                id=f"line{index}",
                points=tuple(points),
                category=category,
                line_type=line_type,
                start_kind=start_kind or EndpointKind.Natural,
                end_kind=end_kind or EndpointKind.Natural,
            )
        except GeometryError as exc:
            raise ParseError(start_index, frozenset({"<valid-line>"}), "<}>", str(exc)) from None

    def parse(self) -> tuple[list[LineRecord], list[Diagnostic]]:
        lines: list[LineRecord] = []
        diagnostics: list[Diagnostic] = []
        first = True
        while self.pos < len(self.toks):
            if not first:
                if self.strict:
                    self._expect("<,>")
                elif self._peek() == "<,>":
                    self.pos += 1
            first = False
            if self.strict:
                lines.append(self._line_object(len(lines)))
                continue
            # lenient: resynchronize at the next <{> on any failure
            if self._peek() != "<{>":
                bad_at = self.pos
                self._resync(bad_at + 1)
                diagnostics.append(
                    Diagnostic(bad_at, "skipped stray tokens before next line object")
                )
                continue
            object_start = self.pos
            try:
                lines.append(self._line_object(len(lines)))
            except ParseError as exc:
                self.pos = max(self.pos, object_start + 1)
                self._resync(self.pos)
                diagnostics.append(Diagnostic(object_start, f"skipped malformed line object: {exc}"))
        return lines, diagnostics

    def _resync(self, start: int):
        pos = start
        while pos < len(self.toks) and self.toks[pos] != "<{>":
            pos += 1
        self.pos = pos


def detokenize(
    source: TokenSequence | str,
    vocab: Vocabulary = Vocabulary(),
    mode: str = "lenient",
    *,
    width_px: float | None = None,
    height_px: float | None = None,
    meters_per_pixel: float = 0.15,
) -> tuple[VectorMap, list[Diagnostic]]:
    """Decode a token sequence (or raw rendered string) back into a map.

    Strict mode parses the exact grammar of :func:`serialize_map` or raises.
    Lenient mode skips malformed line objects, resynchronizing at the next
    <{> and recording one diagnostic per skipped object; missing start/end
    attributes default to Natural.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    strict = mode == "strict"
    diagnostics: list[Diagnostic] = []
    if isinstance(source, TokenSequence):
        tokens = list(source.tokens)
    elif strict:
        tokens = list(tokenize_raw(source, vocab).tokens)
    else:
        tokens = source.replace(" ", "").replace("\n", "").replace("\t", "")
        tokens, diagnostics = _lex_lenient(tokens, vocab)
    parser = _Parser(tokens, vocab, strict)
    lines, parse_diags = parser.parse()
    diagnostics.extend(parse_diags)
    side = float(vocab.max_coord + 1)
    return (
        VectorMap(
            lines=tuple(lines),
            width_px=width_px if width_px is not None else side,
            height_px=height_px if height_px is not None else side,
            meters_per_pixel=meters_per_pixel,
            frame_id="detokenized",
        ),
        diagnostics,
    )
