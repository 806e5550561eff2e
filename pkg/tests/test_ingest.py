from __future__ import annotations

import datetime as dt

import pytest

from irb_forge.ingest import (
    CitationGroup,
    CitingSentence,
    RuleTagger,
    SegmentationError,
    TaggerUnavailableError,
    WikitextParseError,
    extract_citing_sentences,
    filter_syntactic_completeness,
    load_article_file,
    load_articles,
    load_tagger,
    parse_article,
    segment_by_citations,
)
from irb_forge.ingest.syntax import has_svo

ARTICLE = """Lead sentence about Foo.<ref>https://a.example.com/x</ref> Second lead line without ref.

== History ==
Foo was founded in 1990 by Bar.<ref name="n1">{{cite web|url=https://b.example.com/y|title=t}}</ref> \
Foo acquired Baz in 2001,<ref>https://c.example.com/z</ref> and Baz later moved to Oslo.<ref name="n1"/>
Dangling<ref name="missing"/> thing here.
[[Category:Companies]]
"""


@pytest.fixture
def article():
    return parse_article(ARTICLE, title="Foo", last_updated=dt.date(2025, 1, 5))


def test_parse_article_fields(article):
    assert article.abstract == "Lead sentence about Foo. Second lead line without ref."
    assert article.section_headers == ["History"]
    assert article.categories == ["Companies"]
    assert article.cohort_year == 2025
    assert article.skipped_spans == ["reference to undefined named ref 'missing'"]


def test_strict_mode_raises_with_partial(article):
    with pytest.raises(WikitextParseError) as info:
        parse_article(ARTICLE, title="Foo", last_updated=dt.date(2025, 1, 5), strict=True)
    assert info.value.partial is not None
    assert info.value.skipped_spans == article.skipped_spans


def test_citing_sentences_and_named_ref_reuse(article):
    sents = extract_citing_sentences(article, RuleTagger())
    texts = [s.sentence_text for s in sents]
    assert texts == [
        "Lead sentence about Foo.",
        "Foo was founded in 1990 by Bar.",
        "Foo acquired Baz in 2001, and Baz later moved to Oslo.",
    ]
    multi = sents[2]
    assert [g.urls for g in multi.citations] == [("https://c.example.com/z",), ("https://b.example.com/y",)]
    assert [t for t, _ in multi.segments] == ["Foo acquired Baz in 2001,", "and Baz later moved to Oslo."]
    assert multi.context.section_path == ("History",)
    assert multi.context.before == ("Foo was founded in 1990 by Bar.",)
    assert multi.context.after == ("Dangling thing here.",)


def test_sentence_round_trip(article):
    s = extract_citing_sentences(article, RuleTagger())[2]
    assert CitingSentence.from_dict(s.to_dict()).to_dict() == s.to_dict()


def test_segments_partition_sentence(article):
    for s in extract_citing_sentences(article, RuleTagger()):
        assert " ".join(t for t, _ in s.segments).split() == s.sentence_text.split()


def test_segmentation_rejects_bad_positions(article):
    s = extract_citing_sentences(article, RuleTagger())[1]
    s.citations = [CitationGroup(("https://x.example.com/",), 999)]
    with pytest.raises(SegmentationError):
        segment_by_citations(s)


def test_citation_group_validation():
    with pytest.raises(ValueError):
        CitationGroup((), 1)
    with pytest.raises(ValueError):
        CitationGroup(("https://a.example.com", "https://a.example.com"), 1)
    with pytest.raises(ValueError):
        CitationGroup(("not a url",), 1)


def test_completeness_filter(article):
    sents = extract_citing_sentences(article, RuleTagger())
    kept = [s.sentence_text for s in filter_syntactic_completeness(sents, RuleTagger())]
    assert kept == ["Foo was founded in 1990 by Bar.", "Foo acquired Baz in 2001, and Baz later moved to Oslo."]
    with pytest.raises(TaggerUnavailableError):
        filter_syntactic_completeness(sents, None)


@pytest.mark.parametrize(
    "text, complete",
    [
        ("Bender is a city in Transnistria.", True),
        ("The company cut off gas supply to the city.", True),
        ("Awards.", False),
        ("In 2001, near the river.", False),
    ],
)
def test_rule_tagger_svo(text, complete):
    assert has_svo(RuleTagger().parse(text)) is complete


def test_rule_tagger_sentence_split_keeps_abbreviations():
    text = "Dr. Smith met Mr. Jones in the U.S. capital. They talked."
    spans = RuleTagger().sentences(text)
    assert [text[a:b] for a, b in spans] == ["Dr. Smith met Mr. Jones in the U.S. capital.", "They talked."]


def test_load_tagger_unknown_name():
    with pytest.raises((ValueError, TaggerUnavailableError)):
        load_tagger("no-such-tagger")


def test_load_article_front_matter(tmp_path):
    p = tmp_path / "Foo_Bar.wiki"
    p.write_text("---\nlast_updated: 2025-03-01\ncohort_year: 2024\n---\nText.<ref>https://a.example.com</ref>\n",
                 encoding="utf-8")
    a = load_article_file(p)
    assert (a.title, a.page_id, a.cohort_year) == ("Foo Bar", "Foo_Bar", 2024)
    assert [a.title for a in load_articles(tmp_path)] == ["Foo Bar"]
    (tmp_path / "Other.wiki").write_text("No metadata.", encoding="utf-8")
    with pytest.raises(ValueError):
        load_articles(tmp_path)


def test_demo_articles_parse(demo_dir):
    articles = load_articles(demo_dir / "articles")
    assert len(articles) == 3
    sents = [s for a in articles for s in extract_citing_sentences(a, RuleTagger())]
    assert len(sents) == 7
    assert len(filter_syntactic_completeness(sents, RuleTagger())) == 5
