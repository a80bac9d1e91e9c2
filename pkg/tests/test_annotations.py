from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomsmith import (
    DescriptionFormatError,
    DescriptionList,
    ObjectTag,
    extract_tags,
    parse_description_list,
    serialize_description_list,
)


class TestObjectTag:
    def test_parse_plain_and_bracketed(self):
        assert ObjectTag.parse("bed-0") == ObjectTag("bed", 0)
        assert ObjectTag.parse("<bed-0>") == ObjectTag("bed", 0)
        assert ObjectTag.parse("  <night_stand-12>  ") == ObjectTag("night_stand", 12)

    def test_parse_rejects_bad_tags(self):
        for bad in ("bed", "Bed-0", "bed-", "-0", "night-stand-1", "bed-x"):
            with pytest.raises(ValueError):
                ObjectTag.parse(bad)

    def test_str_and_bracketed(self):
        tag = ObjectTag("bed", 0)
        assert str(tag) == "bed-0"
        assert tag.bracketed == "<bed-0>"


class TestExtractTags:
    def test_two_tags(self):
        tagged = extract_tags("A <bed-0> sits beside a <nightstand-1>.")
        assert [str(t) for t in tagged.unique_tags] == ["bed-0", "nightstand-1"]
        assert tagged.scene_level_text == "A bed sits beside a nightstand."

    def test_empty_annotation(self):
        tagged = extract_tags("")
        assert tagged.tags == []
        assert tagged.scene_level_text == ""

    def test_repeated_tag_deduplicated_in_unique_view(self):
        tagged = extract_tags("<bed-0> and <bed-0> again")
        assert len(tagged.tags) == 2
        assert [str(t) for t in tagged.unique_tags] == ["bed-0"]
        spans = [span for _, span in tagged.tags]
        assert spans[0] != spans[1]

    def test_spans_cover_tag_text(self):
        text = "A <bed-0> here."
        tagged = extract_tags(text)
        (tag, (start, end)), = tagged.tags
        assert text[start:end] == "<bed-0>"
        assert tag == ObjectTag("bed", 0)

    def test_malformed_pseudo_tags_warned_and_preserved(self):
        tagged = extract_tags("A <Bed-0> and a <bed_1> here, also 2<3.")
        assert tagged.tags == []
        assert "<Bed-0>" in tagged.scene_level_text
        assert "<bed_1>" in tagged.scene_level_text
        assert len(tagged.warnings) == 2

    def test_idempotent_on_scene_level_text(self):
        tagged = extract_tags("The <wardrobe-0> near the <lamp-3>.")
        again = extract_tags(tagged.scene_level_text)
        assert again.tags == []
        assert again.scene_level_text == tagged.scene_level_text

    def test_underscore_categories_read_naturally(self):
        tagged = extract_tags("A <coffee_table-0>.")
        assert tagged.scene_level_text == "A coffee table."

    @given(st.text(max_size=200))
    @settings(max_examples=200)
    def test_non_tag_bytes_preserved(self, text):
        tagged = extract_tags(text)
        # Splice the original tag text back over each span; the result must
        # reconstruct the input exactly.
        rebuilt = []
        cursor = 0
        for tag, (start, end) in tagged.tags:
            rebuilt.append(text[cursor:start])
            rebuilt.append(tag.bracketed)
            cursor = end
        rebuilt.append(text[cursor:])
        assert "".join(rebuilt) == text


class TestParseDescriptionList:
    def test_aligned_entries(self):
        expected = [ObjectTag("bed", 0), ObjectTag("nightstand", 1)]
        parsed = parse_description_list(
            "bed-0: a low platform bed\nnightstand-1: a walnut nightstand",
            expected)
        assert parsed.missing == []
        assert parsed.surplus == []
        assert parsed.descriptions.entries == [
            (ObjectTag("bed", 0), "a low platform bed"),
            (ObjectTag("nightstand", 1), "a walnut nightstand"),
        ]

    def test_missing_tag_reported(self):
        expected = [ObjectTag("bed", 0), ObjectTag("nightstand", 1),
                    ObjectTag("lamp", 2)]
        parsed = parse_description_list(
            "bed-0: a low platform bed\nnightstand-1: a walnut nightstand",
            expected)
        assert parsed.missing == [ObjectTag("lamp", 2)]
        assert len(parsed.descriptions.entries) == 2

    def test_bracket_tolerant(self):
        parsed = parse_description_list("<bed-0>: a bed", [ObjectTag("bed", 0)])
        assert parsed.descriptions.entries == [(ObjectTag("bed", 0), "a bed")]

    def test_surplus_lines_reported(self):
        expected = [ObjectTag("bed", 0)]
        parsed = parse_description_list(
            "bed-0: a bed\nlamp-9: stray\nnot a description line",
            expected)
        assert parsed.descriptions.entries == [(ObjectTag("bed", 0), "a bed")]
        assert len(parsed.surplus) == 2

    def test_duplicate_line_first_wins(self):
        expected = [ObjectTag("bed", 0)]
        parsed = parse_description_list("bed-0: first\nbed-0: second", expected)
        assert parsed.descriptions.get(ObjectTag("bed", 0)) == "first"
        assert parsed.surplus == ["bed-0: second"]

    def test_zero_parseable_lines_is_format_error(self):
        with pytest.raises(DescriptionFormatError):
            parse_description_list("no tags here\nstill none",
                                   [ObjectTag("bed", 0)])

    def test_entries_follow_expected_order(self):
        expected = [ObjectTag("lamp", 2), ObjectTag("bed", 0)]
        parsed = parse_description_list("bed-0: bed first\nlamp-2: lamp second",
                                        expected)
        assert [str(t) for t, _ in parsed.descriptions.entries] == \
            ["lamp-2", "bed-0"]

    def test_round_trip(self):
        descriptions = DescriptionList(entries=[
            (ObjectTag("bed", 0), "a queen bed with green linen"),
            (ObjectTag("lamp", 1), "a brass floor lamp"),
        ])
        text = serialize_description_list(descriptions)
        parsed = parse_description_list(text, [t for t, _ in descriptions.entries])
        assert parsed.descriptions == descriptions
        assert parsed.missing == []
        assert parsed.surplus == []
        assert serialize_description_list(parsed.descriptions) == text
