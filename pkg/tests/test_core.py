import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from confalign.core import (
    DatasetManifest,
    ParseError,
    PreferencePair,
    PreferenceRecord,
    QAItem,
    RecordError,
    ScoredRecord,
    ScoredSample,
    format_prompt,
    parse_confidence,
    read_records,
    write_records,
)

GRID = [i / 10 for i in range(11)]


def test_format_prompt_renders_confidence_line():
    text = format_prompt("who played will on as the world turns", "Jesse Soffer", 0.9)
    assert "### Confidence: 0.9." in text
    assert text.startswith("### Question: who played will on as the world turns.")
    assert "### Answer: Jesse Soffer." in text


def test_format_prompt_zero_confidence():
    assert "### Confidence: 0.0." in format_prompt("q", "a", 0.0)


@pytest.mark.parametrize("bad", [1.2, -0.1, float("nan")])
def test_format_prompt_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        format_prompt("q", "a", bad)


def test_parse_answer_and_confidence():
    out = parse_confidence("### Answer: 5\n### Confidence: 0.2.")
    assert (out.answer_text, out.confidence) == ("5", 0.2)


def test_parse_missing_confidence():
    with pytest.raises(ParseError) as info:
        parse_confidence("### Answer: Paris.")
    assert info.value.cause == "missing_confidence"


def test_parse_out_of_range():
    with pytest.raises(ParseError) as info:
        parse_confidence("### Answer: x\n### Confidence: 1.7.")
    assert info.value.cause == "out_of_range"


def test_parse_missing_answer():
    with pytest.raises(ParseError) as info:
        parse_confidence("### Confidence: 0.4.")
    assert info.value.cause == "missing_answer"


def test_parse_marker_without_number():
    with pytest.raises(ParseError) as info:
        parse_confidence("### Answer: a\n### Confidence: high.")
    assert info.value.cause == "missing_confidence"


def test_parse_reads_first_confidence_only():
    text = "### Answer: a\n### Confidence: 0.3.\n### Confidence: 0.9."
    assert parse_confidence(text).confidence == 0.3


def test_parse_accepts_full_precision():
    assert parse_confidence("### Answer: a\n### Confidence: 0.125").confidence == 0.125


@pytest.mark.parametrize("c", GRID)
def test_round_trip_over_grid(c):
    out = parse_confidence(format_prompt("q", "a", c))
    assert out.confidence == c
    assert out.answer_text == "a"


@given(st.one_of(st.text(), st.builds(lambda a, b: f"### Answer: {a}\n### Confidence: {b}", st.text(max_size=5), st.text(max_size=8))))
def test_parse_errors_come_from_closed_set(text):
    try:
        parse_confidence(text)
    except ParseError as exc:
        assert exc.cause in {"missing_confidence", "out_of_range", "missing_answer"}


def test_preference_pair_rejects_identical_responses():
    with pytest.raises(ValueError):
        PreferencePair((1,), (2,), (2,))


def test_scored_sample_confidence_range():
    with pytest.raises(ValueError):
        ScoredSample("p", (1,), (2,), 1.5, 0.0, True)


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))


def test_read_three_line_file(tmp_jsonl):
    rows = [{"prompt": f"p{i}", "chosen": "a", "rejected": "b"} for i in range(3)]
    _write_lines(tmp_jsonl, [json.dumps(r) for r in rows])
    recs = read_records(DatasetManifest(tmp_jsonl, "preference_pairs"))
    assert recs == [PreferenceRecord(f"p{i}", "a", "b") for i in range(3)]


def test_read_empty_file(tmp_jsonl):
    tmp_jsonl.write_text("")
    assert read_records(DatasetManifest(tmp_jsonl, "qa_items")) == []


def test_malformed_line_is_named(tmp_jsonl):
    good = json.dumps({"prompt": "p", "chosen": "a", "rejected": "b"})
    _write_lines(tmp_jsonl, [good, '{"prompt": "p", "chosen": "a"}', good])
    with pytest.raises(RecordError, match="line 2"):
        read_records(DatasetManifest(tmp_jsonl, "preference_pairs"))


def test_invalid_json_is_named(tmp_jsonl):
    _write_lines(tmp_jsonl, ["{not json"])
    with pytest.raises(RecordError, match="line 1"):
        read_records(DatasetManifest(tmp_jsonl, "preference_pairs"))


def test_manifest_count_mismatch(tmp_jsonl):
    write_records([QAItem("q0", "q0", "a1", 0.0)], tmp_jsonl)
    with pytest.raises(RecordError):
        read_records(DatasetManifest(tmp_jsonl, "qa_items", count=2))


def test_scored_round_trip_five(tmp_jsonl):
    recs = [ScoredRecord(f"{i}", "a0 0.9", i / 10, i * 0.5 - 1, i % 2 == 0) for i in range(5)]
    manifest = write_records(recs, tmp_jsonl)
    assert manifest.count == 5 and manifest.record_kind == "scored_samples"
    assert read_records(manifest) == recs


def test_write_zero_records(tmp_jsonl):
    manifest = write_records([], tmp_jsonl, "scored_samples")
    assert manifest.count == 0
    assert read_records(manifest) == []


def test_write_zero_records_needs_kind(tmp_jsonl):
    with pytest.raises(RecordError):
        write_records([], tmp_jsonl)


def test_mixed_kinds_rejected(tmp_jsonl):
    with pytest.raises(RecordError):
        write_records([PreferenceRecord("p", "a", "b"), QAItem("q", "q", "a", 0.1)], tmp_jsonl)


def test_wrong_field_type_rejected(tmp_jsonl):
    _write_lines(tmp_jsonl, [json.dumps({"prompt_id": "1", "response": "r", "confidence": 0.5, "quality": 1, "correct": 1})])
    with pytest.raises(RecordError, match="correct"):
        read_records(DatasetManifest(tmp_jsonl, "scored_samples"))


def test_sample_to_record():
    rec = ScoredSample("7:0", (70,), (3, 16, 19), 0.5, 1.25, False).to_record()
    assert rec == ScoredRecord("7:0", "3 16 19", 0.5, 1.25, False)


texts = st.text(max_size=20)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
record_lists = st.one_of(
    st.lists(st.builds(PreferenceRecord, texts, texts, texts), min_size=1, max_size=8),
    st.lists(st.builds(ScoredRecord, texts, texts, st.floats(0, 1), finite, st.booleans()), min_size=1, max_size=8),
    st.lists(st.builds(QAItem, texts, texts, texts, st.floats(0, 1)), min_size=1, max_size=8),
)


@given(record_lists)
def test_write_read_round_trip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("rt") / "r.jsonl"
    assert read_records(write_records(records, path)) == records
