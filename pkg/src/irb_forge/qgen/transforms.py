"""Rule-based node paraphrasing and false-premise perturbation.

The low-level rules take their random draws (surname, country, factor, month
shift) as arguments; the graph-level helpers draw them from a generator seeded
by ``f"{seed}:{fact_id}"``.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
import random
import re
from dataclasses import replace
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from functools import lru_cache
from importlib import resources

from num2words import num2words

from .graph import MaskedGraph, Variant, distinct_nodes, is_mask, node_type_of

logger = logging.getLogger(__name__)

DATE_FORMATS = (
    "%d %B %Y",
    "%d %b %Y",
    "%B %d, %Y",
    "%b %d, %Y",
    "%B %d %Y",
    "%d %B, %Y",
    "%Y-%m-%d",
)
DATE_SHIFT_RANGE = (6, 24)
QUANTITY_FACTOR_RANGE = (1.5, 2.5)
FALSE_PREMISE_ANSWER = "False premise question"

PERSON_TYPES = frozenset(
    "person people human individual politician athlete footballer player author writer actor actress "
    "singer musician scientist president leader journalist artist director coach".split()
)
COUNTRY_TYPES = frozenset(("country", "nation", "sovereign state"))
QUANTITY_TYPE_WORDS = ("quantity", "number", "amount", "count", "percentage", "value")
NAME_PARTICLES = frozenset("van von der den de del della di da du la le bin ibn al".split())
_INITIAL_RE = re.compile(r"^\w\.$")
_NUMBER_RE = re.compile(r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?$")


class FutureDateError(ValueError):
    pass


# --- resources -------------------------------------------------------------

@lru_cache(maxsize=None)
def load_surnames() -> tuple[str, ...]:
    text = resources.files("irb_forge.data").joinpath("surnames.txt").read_text(encoding="utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


@lru_cache(maxsize=None)
def load_countries() -> dict[str, str]:
    """Country name -> ISO 3166-1 alpha-2 code."""
    text = resources.files("irb_forge.data").joinpath("countries.tsv").read_text(encoding="utf-8")
    rows = csv.DictReader(text.splitlines(), delimiter="\t")
    return {r["name"]: r["alpha2"] for r in rows}


# --- node typing -------------------------------------------------------------

def node_kind(text: str, node_type: str) -> str | None:
    """Which rule family applies: person, date, country, quantity or None."""
    t = node_type.strip().casefold()
    if t in PERSON_TYPES or "person" in t:
        return "person"
    if "date" in t:
        return "date"
    if t in COUNTRY_TYPES:
        return "country"
    if any(w in t for w in QUANTITY_TYPE_WORDS):
        return "quantity"
    return None


# --- person ----------------------------------------------------------------

def _split_name(name: str) -> tuple[list[str], list[str]] | None:
    tokens = name.split()
    if len(tokens) < 2:
        return None
    start = len(tokens) - 1
    while start > 1 and tokens[start - 1].lower() in NAME_PARTICLES:
        start -= 1
    return tokens[:start], tokens[start:]


def _initials(given: list[str]) -> list[str]:
    return [g if _INITIAL_RE.match(g) else f"{g[0]}." for g in given]


def abbreviate_person(name: str) -> str | None:
    """"John Fitzgerald Kennedy" -> "J. F. Kennedy"; None when nothing to abbreviate."""
    parts = _split_name(name)
    if parts is None:
        return None
    given, surname = parts
    out = " ".join(_initials(given) + surname)
    return None if out == name else out


def perturb_person(name: str, surname: str) -> str:
    parts = _split_name(name)
    if parts is None:
        raise ValueError(f"cannot perturb single-token name {name!r}")
    given, old = parts
    if " ".join(old).casefold() == surname.casefold():
        raise ValueError("replacement surname equals the original")
    return " ".join(_initials(given) + [surname])


def draw_surname(rng: random.Random, name: str) -> str | None:
    parts = _split_name(name)
    if parts is None:
        return None
    old = " ".join(parts[1]).casefold()
    pool = [s for s in load_surnames() if s.casefold() != old]
    return rng.choice(pool)


# --- date ------------------------------------------------------------------

def parse_date(text: str) -> dt.date | None:
    cleaned = " ".join(text.strip().rstrip(".").split())
    for fmt in DATE_FORMATS:
        try:
            return dt.datetime.strptime(cleaned, fmt).date()
        except ValueError:
            continue
    return None


def months_elapsed(d: dt.date, reference: dt.date) -> int:
    """Whole calendar months from d to reference; a trailing partial month is dropped."""
    n = (reference.year - d.year) * 12 + (reference.month - d.month)
    if reference.day < d.day:
        n -= 1
    return n


def _plural(n: int, unit: str) -> str:
    return f"{n} {unit}" if n == 1 else f"{n} {unit}s"


def format_months_ago(n: int) -> str:
    if n < 1:
        raise ValueError("month count must be positive")
    if n < 12:
        return f"{_plural(n, 'month')} ago"
    years, months = divmod(n, 12)
    if months == 0:
        return f"{_plural(years, 'year')} ago"
    return f"{_plural(years, 'year')} {_plural(months, 'month')} ago"


def relative_date(d: dt.date, reference: dt.date) -> str:
    if d > reference:
        raise FutureDateError(f"{d.isoformat()} is after the reference date {reference.isoformat()}")
    if d == reference:
        return "today"
    n = months_elapsed(d, reference)
    if n == 0:
        return "less than a month ago"
    return format_months_ago(n)


def perturb_relative_date(d: dt.date, reference: dt.date, shift_months: int) -> str:
    """A relative time deliberately ``shift_months`` further back than the truth."""
    if shift_months < 1:
        raise ValueError("shift must be at least one month")
    if d > reference:
        raise FutureDateError(f"{d.isoformat()} is after the reference date {reference.isoformat()}")
    return format_months_ago(max(months_elapsed(d, reference), 0) + shift_months)


# --- country ---------------------------------------------------------------

def canonical_country(text: str) -> str | None:
    key = text.strip()
    if key.lower().startswith("the "):
        key = key[4:]
    for name in load_countries():
        if name.casefold() == key.casefold():
            return name
    return None


def flag_emoji(alpha2: str) -> str:
    code = alpha2.upper()
    if len(code) != 2 or not code.isalpha():
        raise ValueError(f"bad country code {alpha2!r}")
    return "".join(chr(0x1F1E6 + ord(c) - ord("A")) for c in code)


def country_flag_phrase(name: str) -> str | None:
    canon = canonical_country(name)
    if canon is None:
        return None
    return f"the country whose flag is {flag_emoji(load_countries()[canon])}"


def perturb_country(name: str, replacement: str) -> str:
    if canonical_country(replacement) == canonical_country(name):
        raise ValueError("replacement country equals the original")
    return replacement


def draw_country(rng: random.Random, name: str) -> str | None:
    canon = canonical_country(name)
    if canon is None:
        return None
    return rng.choice([c for c in load_countries() if c != canon])


# --- quantity --------------------------------------------------------------

def parse_quantity(text: str) -> Decimal | None:
    t = text.strip()
    if not _NUMBER_RE.match(t):
        return None
    try:
        return Decimal(t.replace(",", ""))
    except InvalidOperation:
        return None


def verbalize_quantity(text: str) -> str | None:
    value = parse_quantity(text)
    return None if value is None else num2words(value)


def perturb_quantity(text: str, factor: float) -> str | None:
    """Scale by ``factor`` and round to the original precision; None if unchanged."""
    value = parse_quantity(text)
    if value is None:
        return None
    scaled = (value * Decimal(repr(factor))).quantize(Decimal(1).scaleb(value.as_tuple().exponent), ROUND_HALF_EVEN)
    if scaled == value:
        return None
    return format(scaled, "f")


def draw_factor(rng: random.Random) -> float:
    return rng.uniform(*QUANTITY_FACTOR_RANGE)


# --- node- and graph-level -------------------------------------------------

def paraphrase_node(text: str, node_type: str, reference: dt.date) -> str | None:
    kind = node_kind(text, node_type)
    if kind == "person":
        return abbreviate_person(text)
    if kind == "date":
        d = parse_date(text)
        if d is None or d > reference:
            logger.info("date node %r not paraphrasable", text)
            return None
        return relative_date(d, reference)
    if kind == "country":
        return country_flag_phrase(text)
    if kind == "quantity":
        return verbalize_quantity(text)
    return None


def perturb_node(text: str, node_type: str, reference: dt.date, rng: random.Random) -> str | None:
    kind = node_kind(text, node_type)
    if kind == "person":
        surname = draw_surname(rng, text)
        return None if surname is None else perturb_person(text, surname)
    if kind == "date":
        d = parse_date(text)
        if d is None or d > reference:
            return None
        return perturb_relative_date(d, reference, rng.randint(*DATE_SHIFT_RANGE))
    if kind == "country":
        other = draw_country(rng, text)
        return None if other is None else perturb_country(text, other)
    if kind == "quantity":
        return perturb_quantity(text, draw_factor(rng))
    return None


def node_rng(seed: int | str, fact_id: str) -> random.Random:
    return random.Random(f"{seed}:{fact_id}")


def paraphrase_nodes(masked: MaskedGraph, reference: dt.date, rng_seed: int | str = 0) -> MaskedGraph:
    """Paraphrase every unmasked node whose type has a rule."""
    if masked.variant is Variant.FALSE_PREMISE:
        raise ValueError("false-premise graphs are not paraphrased")
    mapping: dict[str, str] = {}
    for node in masked.unmasked_nodes():
        surface = paraphrase_node(node, node_type_of(masked.triplets, node), reference)
        if surface is not None and surface != node:
            mapping[node] = surface
    return replace(masked, paraphrase_map=mapping)


def perturb_false_premise(masked: MaskedGraph, reference: dt.date, rng_seed: int | str = 0) -> MaskedGraph | None:
    """Perturb the first eligible unmasked node; None when no node qualifies."""
    if masked.variant is not Variant.SINGLE_HOP:
        raise ValueError("false premises derive from single-hop graphs")
    rng = node_rng(rng_seed, masked.fact_id)
    for node in distinct_nodes(masked.triplets):
        if is_mask(node):
            continue
        surface = perturb_node(node, node_type_of(masked.triplets, node), reference, rng)
        if surface is not None and surface != node:
            return replace(
                masked,
                variant=Variant.FALSE_PREMISE,
                paraphrase_map={},
                perturbation_map={node: surface},
            )
    return None
