import numpy as np
import pytest

from utils.config import SynthSettings
from utils.errors import InputError
from utils.pagexml import Style, parse_page, validate_page, write_page
from utils.synth_data import (
    ALPHABET,
    LINE_BAND,
    PRINTED_WRITER,
    make_writer,
    manuscript_id,
    printed_samples,
    random_text,
    render_line,
    style_glyphs,
    synth_corpus,
)

SMALL = SynthSettings(n_manuscripts=2, pages_per_ms=2, lines_per_page=3, alphabet_size=10, writer_jitter=0.5)


def test_alphabet_size():
    assert len(ALPHABET) == 40
    assert len(set(ALPHABET)) == 40


@pytest.mark.parametrize("style", ["A", "B"])
def test_glyph_designs_are_distinct_within_a_style(style):
    designs = style_glyphs(style)
    assert set(designs) == set(ALPHABET)
    assert len({d.strokes for d in designs.values()}) == len(ALPHABET)


def test_styles_use_different_designs():
    gothic, bastarda = style_glyphs(Style.GOTHIC), style_glyphs(Style.BASTARDA)
    assert all(gothic[c].strokes != bastarda[c].strokes for c in ALPHABET)


def test_render_line_band():
    band = render_line("ab c.", "A", PRINTED_WRITER, np.random.default_rng(0))
    assert band.shape[0] == LINE_BAND
    assert 0.0 <= band.min() and band.max() <= 1.0
    assert band.min() < 0.5


def test_render_line_is_seeded():
    writer = make_writer(np.random.default_rng(1), ALPHABET[:10])
    first = render_line("abc def", "B", writer, np.random.default_rng(2), jitter=0.5)
    second = render_line("abc def", "B", writer, np.random.default_rng(2), jitter=0.5)
    np.testing.assert_array_equal(first, second)


def test_writers_change_the_hand():
    rng = np.random.default_rng(0)
    one, two = make_writer(rng, ALPHABET), make_writer(rng, ALPHABET)
    first = render_line("abc", "A", one, np.random.default_rng(0))
    second = render_line("abc", "A", two, np.random.default_rng(0))
    assert first.shape != second.shape or not np.array_equal(first, second)


def test_render_rejects_unknown_characters():
    with pytest.raises(InputError):
        render_line("aXb", "A", PRINTED_WRITER, np.random.default_rng(0))


def test_random_text_uses_alphabet():
    rng = np.random.default_rng(0)
    for _ in range(200):
        text = random_text(rng, "abc")
        assert set(text) <= set("abc .")
        words = text.rstrip(".").split(" ")
        assert 3 <= len(words) <= 5
        assert all(2 <= len(w) <= 6 for w in words)


def test_manuscript_ids():
    assert manuscript_id("A", 0) == "A00"
    assert manuscript_id(Style.BASTARDA, 3) == "B03"


def test_synth_corpus_layout():
    corpus, rasters = synth_corpus(SMALL, "A", 7)
    assert list(corpus.manuscripts) == ["A00", "A01"]
    assert corpus.styles["A00"] is Style.GOTHIC
    pages = corpus.manuscripts["A01"]
    assert [p.image_ref for p in pages] == ["A01/p000.png", "A01/p001.png"]
    for page in pages:
        validate_page(page)
        assert [line.id for line in page.lines] == ["l00", "l01", "l02"]
        assert rasters[page.image_ref].shape == (page.height, page.width)
        assert all(set(line.transcription) <= set(ALPHABET[:10] + " .") for line in page.lines)


def test_synth_pages_survive_page_xml():
    corpus, _ = synth_corpus(SMALL, "B", 1)
    page = corpus.manuscripts["B00"][0]
    assert parse_page(write_page(page)) == page


def test_synth_corpus_is_deterministic():
    first_corpus, first = synth_corpus(SMALL, "A", 3)
    second_corpus, second = synth_corpus(SMALL, "A", 3)
    other_corpus, _ = synth_corpus(SMALL, "A", 4)
    assert first_corpus == second_corpus
    assert all(np.array_equal(first[key], second[key]) for key in first)
    assert other_corpus != first_corpus


def test_extending_a_corpus():
    corpus, rasters = synth_corpus(SMALL, "A", 3)
    synth_corpus(SMALL, "B", 3, corpus=corpus, rasters=rasters)
    held_out, _ = synth_corpus(SynthSettings(n_manuscripts=1, pages_per_ms=1, lines_per_page=1), "A", 3, first_index=2)
    assert list(corpus.manuscripts) == ["A00", "A01", "B00", "B01"]
    assert list(held_out.manuscripts) == ["A02"]
    assert len(rasters) == 8


@pytest.mark.parametrize("size", [0, 41])
def test_alphabet_size_bounds(size):
    with pytest.raises(InputError):
        synth_corpus(SynthSettings(alphabet_size=size), "A", 0)


def test_printed_samples():
    samples = printed_samples(4, np.random.default_rng(0), alphabet_size=5, input_height=16)
    assert [s.image.source_id for s in samples[:2]] == [("printed", "Gothic", "l0000"), ("printed", "Bastarda", "l0001")]
    assert all(s.image.height == 16 for s in samples)
    assert all(set(s.text) <= set("abcde .") for s in samples)


def test_zero_jitter_renders_identical_glyphs():
    writer = make_writer(np.random.default_rng(3), ALPHABET)
    first = render_line("c", "A", writer, np.random.default_rng(0), jitter=0.0)
    second = render_line("c", "A", writer, np.random.default_rng(99), jitter=0.0)
    np.testing.assert_array_equal(first, second)


def test_character_frequencies_are_near_uniform():
    rng = np.random.default_rng(0)
    alphabet = ALPHABET[:20]
    chars = []
    while len(chars) < 10_000:
        chars.extend(c for c in random_text(rng, alphabet) if c not in " .")
    counts = np.array([chars.count(c) for c in alphabet])
    expected = len(chars) / len(alphabet)
    assert np.all(np.abs(counts - expected) <= 0.2 * expected)
