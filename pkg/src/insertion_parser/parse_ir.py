"""Parse representation: trees, flat pointerized target sequences, BIO tags.

A parse is a tree of intent and slot nodes whose leaves are source token
positions.  The model generates its depth-first serialization, e.g.::

    [IN:GET_WEATHER @0 @1 [SL:CITY @2 @3 ] ]

where ``@n`` points at the n-th source token.  Every source token appears
exactly once as a pointer, in increasing order.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

logger = logging.getLogger(__name__)


class Kind(enum.Enum):
    OPEN_INTENT = "IN"
    OPEN_SLOT = "SL"
    CLOSE = "]"
    POINTER = "@"
    BOS = "<s>"
    EOS = "</s>"
    NO_INSERT = "<no_insert>"
    PAD = "<pad>"
    UNK = "<unk>"


@dataclass(frozen=True)
class Token:
    kind: Kind
    value: Union[str, int, None] = None

    def __str__(self):
        return render_token(self)

    __repr__ = __str__


BOS = Token(Kind.BOS)
EOS = Token(Kind.EOS)
NO_INSERT = Token(Kind.NO_INSERT)
PAD = Token(Kind.PAD)
UNK = Token(Kind.UNK)
CLOSE = Token(Kind.CLOSE)

SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, NO_INSERT)


def intent(name: str) -> Token:
    return Token(Kind.OPEN_INTENT, name)


def slot(name: str) -> Token:
    return Token(Kind.OPEN_SLOT, name)


def ptr(index: int) -> Token:
    return Token(Kind.POINTER, int(index))


def close(label: str | None = None) -> Token:
    """Closing bracket; ``label`` like ``"IN:PLAY"`` gives a labeled close."""
    return CLOSE if label is None else Token(Kind.CLOSE, label)


TargetSequence = tuple  # tuple[Token, ...], BOS first and EOS last


class InvalidTree(ValueError):
    pass


class InvalidBIO(ValueError):
    pass


class MalformedSequence(ValueError):
    CATEGORIES = (
        "unbalanced",
        "no-root-intent",
        "pointer-out-of-range",
        "pointer-order",
        "pointer-coverage",
        "unexpected-token",
    )

    def __init__(self, category: str, detail: str = ""):
        assert category in self.CATEGORIES, category
        self.category = category
        super().__init__(f"{category}: {detail}" if detail else category)


@dataclass(frozen=True)
class SourceQuery:
    tokens: tuple

    def __init__(self, tokens: Iterable[str]):
        tokens = tuple(tokens)
        if not tokens:
            raise ValueError("a query needs at least one token")
        for tok in tokens:
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"bad source token {tok!r}")
        object.__setattr__(self, "tokens", tokens)

    @property
    def m(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]


@dataclass(frozen=True)
class Node:
    kind: str  # "intent" or "slot"
    name: str
    children: tuple = ()

    def __post_init__(self):
        if self.kind not in ("intent", "slot"):
            raise InvalidTree(f"unknown node kind {self.kind!r}")
        object.__setattr__(self, "children", tuple(self.children))

    def depth(self) -> int:
        sub = [c.depth() for c in self.children if isinstance(c, Node)]
        return 1 + max(sub, default=0)

    def indices(self) -> list[int]:
        out = []
        for c in self.children:
            out.extend(c.indices() if isinstance(c, Node) else [c])
        return out

    def intent_depth(self) -> int:
        """Number of intent nodes on the deepest root-to-leaf path."""
        own = 1 if self.kind == "intent" else 0
        sub = [c.intent_depth() for c in self.children if isinstance(c, Node)]
        return own + max(sub, default=0)


ParseTree = Node


def IntentNode(name, children=()):
    return Node("intent", name, tuple(children))


def SlotNode(name, children=()):
    return Node("slot", name, tuple(children))


# -- rendering -----------------------------------------------------------------

def render_token(tok: Token) -> str:
    k = tok.kind
    if k is Kind.OPEN_INTENT:
        return f"[IN:{tok.value}"
    if k is Kind.OPEN_SLOT:
        return f"[SL:{tok.value}"
    if k is Kind.CLOSE:
        return "]" if tok.value is None else f"{tok.value}]"
    if k is Kind.POINTER:
        return f"@{tok.value}"
    return k.value


def render(seq: Sequence[Token]) -> str:
    """Canonical text form, BOS/EOS dropped."""
    return " ".join(render_token(t) for t in seq if t.kind not in (Kind.BOS, Kind.EOS))


def parse_token(text: str) -> Token:
    if text.startswith("[IN:"):
        return intent(text[4:])
    if text.startswith("[SL:"):
        return slot(text[4:])
    if text == "]":
        return CLOSE
    if text.endswith("]") and text[:3] in ("IN:", "SL:"):
        return close(text[:-1])
    if text.startswith("@") and text[1:].isdigit():
        return ptr(int(text[1:]))
    for special in SPECIAL_TOKENS:
        if text == special.kind.value:
            return special
    raise ValueError(f"cannot parse target token {text!r}")


def parse_rendering(text: str) -> TargetSequence:
    """Inverse of :func:`render`; wraps the result in BOS/EOS."""
    return (BOS, *(parse_token(t) for t in text.split()), EOS)


# -- tree <-> sequence -----------------------------------------------------------

def _label(node: Node) -> str:
    return ("IN:" if node.kind == "intent" else "SL:") + node.name


def check_tree(tree: Node, m: int) -> None:
    if not isinstance(tree, Node) or tree.kind != "intent":
        raise InvalidTree("root must be an intent node")
    idx = tree.indices()
    for i in idx:
        if not isinstance(i, int) or isinstance(i, bool) or not 0 <= i < m:
            raise InvalidTree(f"source index {i!r} out of range for m={m}")
    if idx != list(range(m)):
        if len(set(idx)) != len(idx):
            raise InvalidTree("duplicated source index")
        if idx != sorted(idx):
            raise InvalidTree("source indices not increasing")
        raise InvalidTree("source indices do not cover the query")


def linearize(tree: Node, query: SourceQuery | Sequence[str], labeled_close: bool = False) -> TargetSequence:
    """Depth-first, left-to-right serialization of ``tree``."""
    check_tree(tree, len(query))
    out = [BOS]

    def walk(node):
        out.append(intent(node.name) if node.kind == "intent" else slot(node.name))
        for c in node.children:
            if isinstance(c, Node):
                walk(c)
            else:
                out.append(ptr(c))
        out.append(close(_label(node)) if labeled_close else CLOSE)

    walk(tree)
    out.append(EOS)
    return tuple(out)


def delinearize(seq: Sequence[Token], query: SourceQuery | Sequence[str]) -> Node:
    """Rebuild the tree for ``seq``; raises :class:`MalformedSequence`."""
    m = len(query)
    seq = tuple(seq)
    if len(seq) < 2 or seq[0] != BOS or seq[-1] != EOS:
        raise MalformedSequence("unbalanced", "missing BOS/EOS")
    body = seq[1:-1]
    if not body or body[0].kind is not Kind.OPEN_INTENT:
        raise MalformedSequence("no-root-intent")

    stack: list[list] = []  # [kind, name, children]
    root = None
    pointers = []
    for pos, tok in enumerate(body):
        k = tok.kind
        if root is not None:
            raise MalformedSequence("unbalanced", f"token after root closed at {pos}")
        if k in (Kind.OPEN_INTENT, Kind.OPEN_SLOT):
            if k is Kind.OPEN_SLOT and not stack:
                raise MalformedSequence("no-root-intent")
            stack.append(["intent" if k is Kind.OPEN_INTENT else "slot", tok.value, []])
        elif k is Kind.CLOSE:
            if not stack:
                raise MalformedSequence("unbalanced", f"extra close at {pos}")
            kind, name, children = stack.pop()
            node = Node(kind, name, tuple(children))
            if tok.value is not None and tok.value != _label(node):
                raise MalformedSequence("unbalanced", f"{tok.value} closes {_label(node)}")
            if stack:
                stack[-1][2].append(node)
            else:
                root = node
        elif k is Kind.POINTER:
            if not stack:
                raise MalformedSequence("no-root-intent")
            i = tok.value
            if not 0 <= i < m:
                raise MalformedSequence("pointer-out-of-range", f"@{i} with m={m}")
            if pointers and i <= pointers[-1]:
                raise MalformedSequence("pointer-order", f"@{i} after @{pointers[-1]}")
            pointers.append(i)
            stack[-1][2].append(i)
        else:
            raise MalformedSequence("unexpected-token", f"{render_token(tok)} at {pos}")
    if stack or root is None:
        raise MalformedSequence("unbalanced", "unclosed node")
    if len(pointers) != m:
        raise MalformedSequence("pointer-coverage", f"{len(pointers)} of {m} source tokens")
    return root


def is_valid(seq: Sequence[Token], query) -> bool:
    try:
        delinearize(seq, query)
    except MalformedSequence:
        return False
    return True


def exact_match(pred: Sequence[Token], gold: Sequence[Token]) -> bool:
    return tuple(pred) == tuple(gold)


def intent_of(seq: Sequence[Token]) -> str | None:
    """Outermost intent label, or None when the output does not start with one."""
    body = [t for t in seq if t.kind is not Kind.BOS]
    if body and body[0].kind is Kind.OPEN_INTENT:
        return body[0].value
    return None


# -- BIO ---------------------------------------------------------------------

def repair_bio(tags: Sequence[str]) -> tuple[list[str], int]:
    """Promote dangling ``I-X`` tags to ``B-X``; returns (tags, repair count)."""
    out, repairs = [], 0
    prev = "O"
    for tag in tags:
        if tag != "O" and not tag.startswith(("B-", "I-")):
            raise InvalidBIO(f"bad BIO tag {tag!r}")
        if tag.startswith("I-") and prev[2:] != tag[2:]:
            tag = "B-" + tag[2:]
            repairs += 1
        out.append(tag)
        prev = tag
    return out, repairs


def bio_to_tree(intent_name: str, tags: Sequence[str], query: SourceQuery | Sequence[str]) -> Node:
    if len(tags) != len(query):
        raise InvalidBIO(f"{len(tags)} tags for {len(query)} tokens")
    tags, repairs = repair_bio(tags)
    if repairs:
        logger.warning("repaired %d dangling I- tag(s)", repairs)
    children: list = []
    span = None
    for i, tag in enumerate(tags):
        if tag.startswith("I-"):
            span[1].append(i)
            continue
        if span is not None:
            children.append(SlotNode(span[0], span[1]))
            span = None
        if tag == "O":
            children.append(i)
        else:
            span = (tag[2:], [i])
    if span is not None:
        children.append(SlotNode(span[0], span[1]))
    return IntentNode(intent_name, children)


# -- tree transforms ------------------------------------------------------------

def mirror(tree: Node, m: int) -> Node:
    """Reverse child order at every node and re-index pointers for the reversed query."""

    def walk(node):
        kids = []
        for c in reversed(node.children):
            kids.append(walk(c) if isinstance(c, Node) else m - 1 - c)
        return Node(node.kind, node.name, tuple(kids))

    return walk(tree)
