"""Wikipedia article ingestion: citing sentences and their citation segments."""
from .sentences import (
    CitationGroup,
    CitingSentence,
    SegmentationError,
    SentenceContext,
    SourceRef,
    extract_citing_sentences,
    filter_syntactic_completeness,
    segment_by_citations,
)
from .syntax import RuleTagger, SpacyTagger, Tagger, TaggerUnavailableError, load_tagger
from .wikitext import ArticleSource, WikitextParseError, load_article_file, load_articles, parse_article

__all__ = [
    "ArticleSource",
    "CitationGroup",
    "CitingSentence",
    "RuleTagger",
    "SegmentationError",
    "SentenceContext",
    "SourceRef",
    "SpacyTagger",
    "Tagger",
    "TaggerUnavailableError",
    "WikitextParseError",
    "extract_citing_sentences",
    "filter_syntactic_completeness",
    "load_article_file",
    "load_articles",
    "load_tagger",
    "parse_article",
    "segment_by_citations",
]
