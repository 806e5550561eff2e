"""Sentence splitting and shallow dependency tagging behind a narrow interface.

The filter only needs a token + dependency-label stream, so any tagger that
can produce one (spaCy, or the rule-based fallback here) plugs in.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

SUBJECT_DEPS = frozenset({"nsubj", "nsubjpass", "csubj", "csubjpass", "expl"})
OBJECT_DEPS = frozenset(
    {"dobj", "obj", "iobj", "dative", "attr", "acomp", "oprd", "xcomp", "ccomp", "pobj", "obl"}
)
VERB_POS = frozenset({"VERB", "AUX"})


class TaggerUnavailableError(RuntimeError):
    """Raised when the configured syntactic tagger cannot be loaded."""


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int
    pos: str
    dep: str
    head: int


class Tagger(Protocol):
    name: str

    def sentences(self, text: str) -> list[tuple[int, int]]: ...

    def parse(self, text: str) -> list[Token]: ...


def has_svo(tokens: Sequence[Token]) -> bool:
    """Nominal subject, a verbal root and at least one object/complement."""
    has_root = any(t.dep == "ROOT" and t.pos in VERB_POS for t in tokens)
    has_subj = any(t.dep in SUBJECT_DEPS for t in tokens)
    has_obj = any(t.dep in OBJECT_DEPS for t in tokens)
    return has_root and has_subj and has_obj


# --------------------------------------------------------------------------
# Rule-based fallback

_ABBREVIATIONS = frozenset(
    """mr mrs ms dr prof sr jr st mt ft no vs etc inc ltd co corp dept est gen gov col lt
    sgt capt rev hon e.g i.e al approx fig jan feb mar apr jun jul aug sep sept oct nov dec
    u.s u.k a.m p.m ph.d b.a m.a d.c""".split()
)
_SENT_END_RE = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s+[\"'“‘(\[]?[A-Z0-9Ѐ-ӿ])")

_DET = frozenset(
    "the a an this that these those his her its their our my your some any each every no "
    "all both either neither another several many few".split()
)
_PRON = frozenset("he she it they we i you him them us me who whom whose which one".split())
_ADP = frozenset(
    "of in on at by for with from to into onto during after before over under between against "
    "about through across behind near since until within without among per via as upon toward "
    "towards throughout beyond despite amid around alongside following including".split()
)
_CCONJ = frozenset("and or but nor yet &".split())
_SCONJ = frozenset("because although while if when where whereas though unless whether".split())
_AUX = frozenset(
    "is are was were be been being am has have had do does did will would can could shall "
    "should may might must 's".split()
)
_BE = frozenset("is are was were be been being am".split())
_ADV = frozenset("not also then still already later subsequently again only just never often".split())
# Irregular verb forms plus frequent regular ones; regular -ed/-s forms are caught by suffix.
_VERB_FORMS = frozenset(
    """became become becomes won win wins made make makes took take takes gave give gives went go goes
    came come comes began begin begins wrote write writes built build builds held hold holds led lead
    leads left leave leaves met meet meets paid pay pays sold sell sells told tell tells found find finds
    brought bring brings bought buy buys thought taught teach fought fight fights sent send sends spent
    spend spends lost lose loses ran run runs saw see sees said say says set sets put puts hit hits cut cuts
    beat beats chose choose chooses drove drive drives fell fall falls felt feel feels flew fly flies got
    get gets grew grow grows heard hear hears kept keep keeps knew know knows laid lay lies meant mean
    means rode rose rise rises sang sing sings sank sat sit sits shot shoot shoots slept spoke speak
    speaks stood stand stands stole struck strike strikes swam threw throw throws understood woke wore
    overtook drew draw draws ate eat eats forgot hid lit shook shut sprang stuck swore tore won
    born borne broken chosen done drawn driven eaten fallen flown forgotten given gone grown hidden
    known ridden risen seen shaken spoken stolen taken thrown written worn
    contains contain includes include serves serve hosts host remains remain represents represent
    features feature plays play scored score scores starred star stars debuted debut debuts
    premiered premiere premieres ruled rule rules cut ceased cease ceases""".split()
)
_PARTICIPLES = frozenset(
    """born borne broken chosen done drawn driven eaten fallen flown forgotten given gone grown hidden
    known ridden risen seen shaken spoken stolen taken thrown written worn made held led built sold
    found won paid sent set put cut hit kept lost shot told""".split()
)
_ED_NOUNS = frozenset("hundred red bed seed speed need feed deed shed sled bred creed greed steed".split())
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "ical", "ic", "less", "ish", "ese", "ian", "al")


def _tag_word(word: str, index: int) -> str:
    low = word.lower()
    if not re.search(r"\w", word):
        return "PUNCT"
    if re.fullmatch(r"[\d.,:/-]+", word) or re.fullmatch(r"\d+(st|nd|rd|th|s)", low):
        return "NUM"
    if low in _DET:
        return "DET"
    if low in _PRON:
        return "PRON"
    if low in _ADP:
        return "ADP"
    if low in _CCONJ:
        return "CCONJ"
    if low in _SCONJ:
        return "SCONJ"
    if low in _AUX:
        return "AUX"
    if low in _ADV or (low.endswith("ly") and len(low) > 4):
        return "ADV"
    if low in _VERB_FORMS:
        return "VERB"
    if word[0].isupper() and (index > 0 or low not in _VERB_FORMS):
        return "PROPN"
    if low.endswith("ed") and len(low) > 4 and low not in _ED_NOUNS:
        return "VERB"
    if low.endswith("ing") and len(low) > 5:
        return "VERB_ING"
    if low.endswith(_ADJ_SUFFIXES) and len(low) > 5:
        return "ADJ"
    return "NOUN"


_NOMINAL = frozenset({"NOUN", "PROPN", "PRON", "NUM"})


class RuleTagger:
    """Deterministic lexicon + suffix tagger with a shallow S-V-O parse.

    Good enough to separate full clauses from headings and fragments; plug in
    SpacyTagger for real dependency parses.
    """

    name = "rule"

    def sentences(self, text: str) -> list[tuple[int, int]]:
        spans: list[tuple[int, int]] = []
        start = 0
        for m in _SENT_END_RE.finditer(text):
            end = m.end()
            if _is_abbreviation(text, m.start()):
                continue
            if text[start:end].strip():
                spans.append(_trim(text, start, end))
            start = end
        if text[start:].strip():
            spans.append(_trim(text, start, len(text)))
        return spans

    def parse(self, text: str) -> list[Token]:
        raw = [(m.group(), m.start(), m.end()) for m in re.finditer(r"\w+(?:[-'.]\w+)*|[^\w\s]", text)]
        pos = [_tag_word(w, i) for i, (w, _, _) in enumerate(raw)]
        # "-ing" forms are verbal only right after an auxiliary.
        for i, p in enumerate(pos):
            if p == "VERB_ING":
                pos[i] = "VERB" if i and pos[i - 1] == "AUX" else "NOUN"
        deps = ["dep"] * len(raw)
        heads = list(range(len(raw)))

        root = self._find_root(raw, pos)
        if root is not None:
            deps[root] = "ROOT"
            heads[root] = root
            subj = self._find_subject(pos, root)
            if subj is not None:
                passive = any(
                    pos[j] == "AUX" and raw[j][0].lower() in _BE for j in range(subj + 1, root)
                ) and (raw[root][0].lower().endswith("ed") or raw[root][0].lower() in _PARTICIPLES)
                deps[subj] = "nsubjpass" if passive else "nsubj"
                heads[subj] = root
            for j in range(root + 1, len(raw)):
                if pos[j] == "AUX" and j > root:
                    deps[j] = "aux"
            self._attach_complements(raw, pos, deps, heads, root)
        return [
            Token(w, s, e, "AUX" if p == "AUX" else p, d, h)
            for (w, s, e), p, d, h in zip(raw, pos, deps, heads)
        ]

    @staticmethod
    def _find_root(raw, pos) -> int | None:
        # First verb preceded somewhere by a nominal; fall back to a copular auxiliary.
        seen_nominal = False
        aux_candidate = None
        for i, p in enumerate(pos):
            if p in _NOMINAL:
                seen_nominal = True
            elif p == "VERB" and seen_nominal:
                return i
            elif p == "AUX" and seen_nominal and aux_candidate is None:
                aux_candidate = i
        return aux_candidate

    @staticmethod
    def _find_subject(pos, root) -> int | None:
        # Nearest nominal before the verb group that is not a prepositional object.
        i = root - 1
        while i >= 0 and pos[i] in {"AUX", "ADV"}:
            i -= 1
        fallback = None
        for j in range(i, -1, -1):
            if pos[j] not in _NOMINAL:
                continue
            k = j
            while k > 0 and pos[k - 1] in _NOMINAL | {"ADJ", "DET"}:
                k -= 1
            if k > 0 and pos[k - 1] == "ADP":
                fallback = j if fallback is None else fallback
                continue
            return j
        return fallback

    @staticmethod
    def _attach_complements(raw, pos, deps, heads, root) -> None:
        copular = pos[root] == "AUX" and raw[root][0].lower() in _BE
        prev_adp = False
        for j in range(root + 1, len(raw)):
            p = pos[j]
            if p == "PUNCT" and raw[j][0] in ".;!?":
                break
            if p == "ADP":
                deps[j] = "prep"
                heads[j] = root
                prev_adp = True
                continue
            if p in _NOMINAL or (p == "ADJ" and copular):
                if prev_adp:
                    deps[j] = "pobj"
                elif copular:
                    deps[j] = "attr" if p in _NOMINAL else "acomp"
                else:
                    deps[j] = "dobj"
                heads[j] = root
                return
            if p == "VERB" and raw[j - 1][0].lower() == "to":
                deps[j] = "xcomp"
                heads[j] = root
                return


def _is_abbreviation(text: str, dot: int) -> bool:
    m = re.search(r"([\w.]+)$", text[:dot])
    if not m:
        return False
    word = m.group(1).lower()
    if len(word) == 1 and word.isalpha():
        return True  # initials such as "C."
    return word.rstrip(".") in _ABBREVIATIONS


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


class SpacyTagger:
    """Adapter over a spaCy pipeline (needs the parser component)."""

    name = "spacy"

    def __init__(self, model: str = "en_core_web_sm") -> None:
        try:
            import spacy
        except ImportError as exc:
            raise TaggerUnavailableError("spaCy is not installed") from exc
        try:
            self._nlp = spacy.load(model)
        except OSError as exc:
            raise TaggerUnavailableError(f"spaCy model {model!r} is not installed") from exc

    def sentences(self, text: str) -> list[tuple[int, int]]:
        doc = self._nlp(text)
        return [_trim(text, s.start_char, s.end_char) for s in doc.sents if s.text.strip()]

    def parse(self, text: str) -> list[Token]:
        doc = self._nlp(text)
        return [
            Token(t.text, t.idx, t.idx + len(t.text), t.pos_, t.dep_, t.head.i) for t in doc
        ]


def load_tagger(name: str = "rule", **kwargs) -> Tagger:
    if name == "rule":
        return RuleTagger()
    if name == "spacy":
        return SpacyTagger(**kwargs)
    raise TaggerUnavailableError(f"unknown tagger {name!r}")
