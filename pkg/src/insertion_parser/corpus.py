"""Corpora: synthetic grammar generation, file loaders, vocabularies."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import parse_ir as ir
from .parse_ir import Kind, Node, SourceQuery, Token

logger = logging.getLogger(__name__)

WORD_ORDERS = ("identity", "reverse", "reverse_spans")


class GrammarError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, line_no: int, category: str, detail: str = ""):
        self.line_no = line_no
        self.category = category
        super().__init__(f"line {line_no}: {category}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class Example:
    query: SourceQuery
    target: tuple
    language: str = "A"

    @property
    def tree(self) -> Node:
        return ir.delinearize(self.target, self.query)

    @property
    def n(self) -> int:
        return len(self.target) - 2

    def to_json(self) -> dict:
        d = {"tokens": list(self.query.tokens), "target": ir.render(self.target)}
        if self.language != "A":
            d["lang"] = self.language
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Example":
        query = SourceQuery(d["tokens"])
        target = ir.parse_rendering(d["target"])
        ir.delinearize(target, query)
        return cls(query, target, d.get("lang", "A"))


class LoadResult(list):
    """A list of examples that also remembers what the loader skipped or fixed."""

    def __init__(self, items=(), skipped=None, repairs=0):
        super().__init__(items)
        self.skipped: list[FormatError] = list(skipped or [])
        self.repairs = repairs

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


# -- vocabulary ------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    tag_tokens: tuple
    source_words: tuple  # index 0 is padding, 1 is unknown

    def __post_init__(self):
        object.__setattr__(self, "_tag_index", {t: i for i, t in enumerate(self.tag_tokens)})
        object.__setattr__(self, "_src_index", {w: i for i, w in enumerate(self.source_words)})

    @property
    def V(self) -> int:
        return len(self.tag_tokens)

    def __len__(self):
        return len(self.tag_tokens)

    @property
    def source_lexicon(self) -> dict:
        return dict(self._src_index)

    @property
    def no_insert_id(self) -> int:
        return self._tag_index[ir.NO_INSERT]

    @property
    def pad_id(self) -> int:
        return self._tag_index[ir.PAD]

    def tag_id(self, tok: Token) -> int:
        return self._tag_index.get(tok, self._tag_index[ir.UNK])

    def joint_id(self, tok: Token) -> int:
        """Index in the per-slot output space: tags first, then source positions."""
        if tok.kind is Kind.POINTER:
            return self.V + tok.value
        return self.tag_id(tok)

    def token(self, joint_id: int) -> Token:
        if joint_id >= self.V:
            return ir.ptr(joint_id - self.V)
        return self.tag_tokens[joint_id]

    def source_ids(self, words: Iterable[str]) -> list[int]:
        return [self._src_index.get(w, 1) for w in words]

    def to_dict(self) -> dict:
        return {"tags": [ir.render_token(t) for t in self.tag_tokens], "source": list(self.source_words)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(ir.parse_token(t) for t in d["tags"]), tuple(d["source"]))


def build_vocab(examples: Sequence[Example], labeled_close: bool = False) -> Vocabulary:
    if not examples:
        raise ValueError("cannot build a vocabulary from no examples")
    intents, slots, closes, words = set(), set(), set(), set()
    for ex in examples:
        words.update(ex.query.tokens)
        for t in ex.target:
            if t.kind is Kind.OPEN_INTENT:
                intents.add(t.value)
                closes.add("IN:" + t.value)
            elif t.kind is Kind.OPEN_SLOT:
                slots.add(t.value)
                closes.add("SL:" + t.value)
    close_tokens = [ir.close(c) for c in sorted(closes)] if labeled_close else [ir.CLOSE]
    tags = (
        *ir.SPECIAL_TOKENS,
        *close_tokens,
        *(ir.intent(x) for x in sorted(intents)),
        *(ir.slot(x) for x in sorted(slots)),
    )
    return Vocabulary(tags, ("<pad>", "<unk>", *sorted(words)))


def relabel_closes(target: Sequence[Token]) -> tuple:
    """Rewrite plain ``]`` tokens as labeled closes (and leave the rest alone)."""
    out, stack = [], []
    for t in target:
        if t.kind in (Kind.OPEN_INTENT, Kind.OPEN_SLOT):
            stack.append(("IN:" if t.kind is Kind.OPEN_INTENT else "SL:") + t.value)
            out.append(t)
        elif t.kind is Kind.CLOSE:
            out.append(ir.close(stack.pop()))
        else:
            out.append(t)
    return tuple(out)


# -- synthetic grammar ---------------------------------------------------------------

@dataclass
class GrammarSpec:
    intents: dict            # intent -> slot signature
    carrier_phrases: dict    # intent -> templates, "{SLOT}" marks a slot position
    slots: dict              # slot -> filler phrases
    nested: dict = field(default_factory=dict)  # slot -> intents allowed inside it
    nesting_depth: int = 1
    word_order: str = "identity"
    vocab: list = field(default_factory=list)
    language: str = "A"

    def validate(self) -> None:
        if self.nesting_depth < 1:
            raise GrammarError("nesting_depth must be >= 1")
        if self.word_order not in WORD_ORDERS:
            raise GrammarError(f"unknown word_order {self.word_order!r}")
        if not self.intents:
            raise GrammarError("no intents")
        lexicon = set(self.vocab)
        if not lexicon:
            raise GrammarError("empty vocab")
        for name, sig in self.intents.items():
            for s in sig:
                if s not in self.slots:
                    raise GrammarError(f"intent {name} references unknown slot {s}")
            templates = self.carrier_phrases.get(name) or []
            if not templates:
                raise GrammarError(f"intent {name} has no carrier phrases")
            for tmpl in templates:
                for piece in tmpl.split():
                    if _is_placeholder(piece):
                        if piece[1:-1] not in sig:
                            raise GrammarError(f"{name}: template slot {piece} not in signature")
                    elif piece not in lexicon:
                        raise GrammarError(f"carrier word {piece!r} not in vocab")
        for s, fillers in self.slots.items():
            if not fillers:
                raise GrammarError(f"slot {s} has an empty lexicon")
            for f in fillers:
                if not f.split() or any(w not in lexicon for w in f.split()):
                    raise GrammarError(f"slot {s}: filler {f!r} uses words outside vocab")
        for s, inner in self.nested.items():
            if s not in self.slots:
                raise GrammarError(f"nested entry for unknown slot {s}")
            for name in inner:
                if name not in self.intents:
                    raise GrammarError(f"slot {s} nests unknown intent {name}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GrammarSpec":
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "GrammarSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def max_depth(self, name: str, _seen=()) -> int:
        """Deepest intent nesting reachable from ``name`` (capped by nesting_depth)."""
        if name in _seen or len(_seen) + 1 >= self.nesting_depth:
            return 1
        best = 1
        for tmpl in self.carrier_phrases[name]:
            for piece in tmpl.split():
                if _is_placeholder(piece):
                    for inner in self.nested.get(piece[1:-1], ()):
                        best = max(best, 1 + self.max_depth(inner, (*_seen, name)))
        return min(best, self.nesting_depth)


def _is_placeholder(piece: str) -> bool:
    return piece.startswith("{") and piece.endswith("}")


_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def _pseudo_words(count: int, rng: random.Random, onsets=_ONSETS, vowels=_VOWELS, avoid=()) -> list[str]:
    seen, out = set(avoid), []
    while len(out) < count:
        syl = rng.choice((2, 2, 3))
        w = "".join(rng.choice(onsets) + rng.choice(vowels) for _ in range(syl))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def default_grammar(seed: int = 20201, n_intents: int = 8, n_slots: int = 12,
                    nesting_depth: int = 2, lexicon_size: int = 200) -> GrammarSpec:
    """Desk-scale task-oriented grammar with a few slots that can hold nested intents."""
    rng = random.Random(seed)
    words = _pseudo_words(lexicon_size, rng)
    n_carrier = lexicon_size - n_slots * ((lexicon_size * 3 // 4) // n_slots)
    carrier, rest = words[:n_carrier], words[n_carrier:]
    per_slot = len(rest) // n_slots

    slot_names = [f"SLOT{j}" for j in range(n_slots)]
    slots = {}
    for j, s in enumerate(slot_names):
        pool = rest[j * per_slot:(j + 1) * per_slot]
        fillers = set()
        while len(fillers) < 10:
            fillers.add(" ".join(rng.sample(pool, rng.choice((1, 1, 2, 2, 3)))))
        slots[s] = sorted(fillers)

    intent_names = [f"INTENT{k}" for k in range(n_intents)]
    triggers, shared = carrier[:n_intents], carrier[n_intents:]
    # the last quarter of intents are small "sub-queries" that nest inside slots
    n_inner = max(1, n_intents // 4)
    inner_intents = intent_names[-n_inner:]
    nestable = slot_names[:max(1, n_slots // 4)]

    intents, phrases = {}, {}
    for k, name in enumerate(intent_names):
        n_sig = 1 if name in inner_intents else rng.choice((2, 3, 3))
        candidates = [s for s in slot_names if name not in inner_intents or s not in nestable]
        sig = rng.sample(candidates, n_sig)
        if name not in inner_intents and not set(sig) & set(nestable):
            sig[0] = rng.choice(nestable)
        intents[name] = sig
        templates = []
        for _ in range(3):
            used = rng.sample(sig, rng.randint(max(1, len(sig) - 1), len(sig)))
            pieces = [triggers[k]] + rng.sample(shared, rng.randint(1, 4))
            for s in used:
                pieces.insert(rng.randint(1, len(pieces)), "{" + s + "}")
            templates.append(" ".join(pieces))
        phrases[name] = templates
    nested = {s: list(inner_intents) for s in nestable}
    spec = GrammarSpec(intents, phrases, slots, nested, nesting_depth, "identity", sorted(words))
    spec.validate()
    return spec


def derive_language(spec: GrammarSpec, word_order: str = "reverse_spans", seed: int = 1,
                    language: str = "B") -> tuple[GrammarSpec, dict]:
    """Same labels and structure, new surface words and word order.

    Returns the new spec and the word alignment new-word -> original-word.
    """
    rng = random.Random(seed)
    fresh = _pseudo_words(len(spec.vocab), rng, onsets="c h j q w x y".split(), avoid=spec.vocab)
    mapping = dict(zip(spec.vocab, fresh))

    def tr(text):
        return " ".join(p if _is_placeholder(p) else mapping[p] for p in text.split())

    new = GrammarSpec(
        intents={k: list(v) for k, v in spec.intents.items()},
        carrier_phrases={k: [tr(t) for t in v] for k, v in spec.carrier_phrases.items()},
        slots={k: [tr(f) for f in v] for k, v in spec.slots.items()},
        nested={k: list(v) for k, v in spec.nested.items()},
        nesting_depth=spec.nesting_depth,
        word_order=word_order,
        vocab=sorted(fresh),
        language=language,
    )
    new.validate()
    return new, {b: a for a, b in mapping.items()}


def _apply_word_order(wtree, order: str):
    kind, name, children = wtree
    if order == "identity":
        return wtree
    if order == "reverse":
        return (kind, name, [c if isinstance(c, str) else _apply_word_order(c, order)
                             for c in reversed(children)])
    # reverse_spans: flip the words inside each slot, keep everything else in place
    kids = [c if isinstance(c, str) else _apply_word_order(c, order) for c in children]
    if kind == "slot":
        kids = kids[::-1] if all(isinstance(c, str) for c in kids) else kids
    return (kind, name, kids)


def _flatten(wtree) -> tuple[list[str], Node]:
    words: list[str] = []

    def walk(node):
        kind, name, children = node
        kids = []
        for c in children:
            if isinstance(c, str):
                kids.append(len(words))
                words.append(c)
            else:
                kids.append(walk(c))
        return Node(kind, name, tuple(kids))

    tree = walk(wtree)
    return words, tree


def generate_synthetic(spec: GrammarSpec, count: int, seed: int, labeled_close: bool = False) -> list[Example]:
    """Sample ``count`` parsed queries; a pure function of its arguments."""
    if count < 1:
        raise ValueError("count must be >= 1")
    spec.validate()
    rng = random.Random(seed)
    names = list(spec.intents)
    reach = {name: spec.max_depth(name) for name in names}

    def expand(name, need):
        # need: intent levels still required below this one
        templates = spec.carrier_phrases[name]
        if need:
            templates = [t for t in templates if _nest_options(t, need)] or templates
        tmpl = rng.choice(templates)
        deep_slot = None
        if need:
            options = _nest_options(tmpl, need)
            if options:
                deep_slot = rng.choice(options)
        children = []
        for piece in tmpl.split():
            if not _is_placeholder(piece):
                children.append(piece)
                continue
            s = piece[1:-1]
            if s == deep_slot:
                inner = [x for x in spec.nested[s] if reach[x] >= need]
                filler = [expand(rng.choice(inner), need - 1)]
            else:
                filler = rng.choice(spec.slots[s]).split()
            children.append(("slot", s, filler))
        return ("intent", name, children)

    def _nest_options(tmpl, need):
        out = []
        for piece in tmpl.split():
            if _is_placeholder(piece):
                s = piece[1:-1]
                if any(reach[x] >= need for x in spec.nested.get(s, ())):
                    out.append(s)
        return out

    examples = []
    for _ in range(count):
        depth = rng.randint(1, spec.nesting_depth)
        roots = [x for x in names if reach[x] >= depth] or names
        wtree = expand(rng.choice(roots), depth - 1)
        wtree = _apply_word_order(wtree, spec.word_order)
        words, tree = _flatten(wtree)
        query = SourceQuery(words)
        examples.append(Example(query, ir.linearize(tree, query, labeled_close), spec.language))
    return examples


def translate_query(words: Sequence[str], alignment: dict) -> list[str]:
    """Map foreign surface words to their aligned counterparts (unknowns kept)."""
    return [alignment.get(w, w) for w in words]


# -- file formats --------------------------------------------------------------------

def save_jsonl(examples: Iterable[Example], path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
    tmp.replace(path)


def load_jsonl(path) -> LoadResult:
    out = LoadResult()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(Example.from_json(json.loads(line)))
            except ir.MalformedSequence as e:
                out.skipped.append(FormatError(line_no, e.category))
            except (ValueError, KeyError, TypeError) as e:
                out.skipped.append(FormatError(line_no, "format", str(e)))
    _report(path, out)
    return out


def _report(path, result: LoadResult) -> None:
    for err in result.skipped:
        logger.warning("%s: skipped %s", path, err)


def parse_top_line(line: str, line_no: int = 0) -> Example:
    cols = line.rstrip("\n").split("\t")
    if len(cols) != 3:
        raise FormatError(line_no, "columns", f"expected 3, got {len(cols)}")
    words = cols[1].split()
    if not words:
        raise FormatError(line_no, "empty")
    query = SourceQuery(words)
    target, nxt = [ir.BOS], 0
    for piece in cols[2].split():
        if piece.startswith("[IN:"):
            target.append(ir.intent(piece[4:]))
        elif piece.startswith("[SL:"):
            target.append(ir.slot(piece[4:]))
        elif piece == "]":
            target.append(ir.CLOSE)
        else:
            if nxt >= len(words) or words[nxt] != piece:
                raise FormatError(line_no, "token-mismatch", piece)
            target.append(ir.ptr(nxt))
            nxt += 1
    target.append(ir.EOS)
    target = tuple(target)
    try:
        ir.delinearize(target, query)
    except ir.MalformedSequence as e:
        raise FormatError(line_no, e.category) from e
    return Example(query, target)


def load_top_tsv(path) -> LoadResult:
    """TOP-style TSV: raw utterance, tokenized utterance, bracketed parse."""
    out = LoadResult()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_top_line(line, line_no))
            except FormatError as e:
                out.skipped.append(e)
    _report(path, out)
    return out


def load_bio(path) -> LoadResult:
    """Blocks of ``token<TAB>tag`` lines under a ``# intent=NAME`` header."""
    out = LoadResult()

    def flush(block, start):
        intent_name, rows = block
        if intent_name is None and not rows:
            return
        try:
            if intent_name is None:
                raise FormatError(start, "missing-intent")
            if not rows:
                raise FormatError(start, "empty")
            words = [w for w, _ in rows]
            tags, repairs = ir.repair_bio([t for _, t in rows])
            query = SourceQuery(words)
            tree = ir.bio_to_tree(intent_name, tags, query)
            out.append(Example(query, ir.linearize(tree, query)))
            out.repairs += repairs
        except ir.InvalidBIO as e:
            out.skipped.append(FormatError(start, "bio", str(e)))
        except FormatError as e:
            out.skipped.append(e)

    with open(path, encoding="utf-8") as f:
        block, start = (None, []), 1
        bad = False
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if not bad:
                    flush(block, start)
                block, start, bad = (None, []), line_no + 1, False
                continue
            if bad:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "intent" and value.strip():
                    block = (value.strip(), block[1])
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                out.skipped.append(FormatError(line_no, "columns"))
                bad = True
                continue
            block[1].append((parts[0], parts[1].strip()))
        if not bad:
            flush(block, start)
    _report(path, out)
    return out


def split(examples: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> list[list]:
    """Shuffled split into consecutive parts with the given fractions."""
    idx = list(range(len(examples)))
    random.Random(seed).shuffle(idx)
    parts, start = [], 0
    for k, frac in enumerate(fractions):
        stop = len(idx) if k == len(fractions) - 1 else start + round(frac * len(idx))
        parts.append([examples[i] for i in idx[start:stop]])
        start = stop
    return parts
