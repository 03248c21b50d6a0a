"""
PR 01 — Session Model & Adapters Tests

REAL tests (NO MOCKS) over the normalized format and the source adapters.

Testing Endpoints:
1. normalized lines parse into Sessions and serialize back to equal Sessions
2. malformed records name the offending field
3. adapters map raw release formats onto the canonical model
4. corpus statistics and vocabulary are computed over all sessions
"""

import json

import pytest

from sessionguard.session_model import (
    VALID_SOURCES,
    AdapterConfigError,
    AttackMode,
    AttackModeKind,
    Label,
    NoToolCallsSkip,
    SessionParseError,
    SessionValidationError,
    adapt_record,
    build_tool_vocabulary,
    canonical_args,
    corpus_stats,
    iter_raw_records,
    merge_corpora,
    parse_session_line,
    read_sessions,
    serialize_session,
    write_sessions,
)


def _line(**overrides):
    record = {
        "session_id": "s-1",
        "source": "ras_eval",
        "task_id": "task-a",
        "label": "attack",
        "attack_mode": "tool_output",
        "calls": [
            {"tool": "search", "arguments": {"q": "weather", "n": 3}, "response": "sunny tomorrow"},
            {"tool": "send_email", "arguments": "{\"to\": \"bob\"}", "response": ""},
        ],
    }
    record.update(overrides)
    return json.dumps(record)


@pytest.mark.pr01
def test_normalized_line_parses():
    """
    Testing Endpoint 1: a normalized line becomes a Session

    REAL TEST - Arguments are re-serialized canonically and indices assigned in order.
    """
    session = parse_session_line(_line())

    assert session.session_id == "s-1"
    assert session.label == Label.ATTACK
    assert session.attack_mode == AttackMode(AttackModeKind.TOOL_OUTPUT)
    assert [c.index for c in session.calls] == [0, 1]
    assert session.calls[0].args_text == '{"n":3,"q":"weather"}'
    assert session.calls[1].args_text == '{"to":"bob"}'
    assert session.calls[0].response_length == len("sunny tomorrow")


@pytest.mark.pr01
def test_serialize_then_parse_preserves_session():
    """Serializing and re-parsing yields an equal Session."""
    session = parse_session_line(_line())
    assert parse_session_line(serialize_session(session)) == session


@pytest.mark.pr01
def test_free_form_attack_mode_kept_as_other():
    session = parse_session_line(_line(attack_mode="prompt_leak"))
    assert session.attack_mode.kind == AttackModeKind.OTHER
    assert session.attack_mode.name == "prompt_leak"
    assert session.attack_category == "prompt_leak"


@pytest.mark.pr01
@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"session_id": 5}, "session_id"),
        ({"label": "maybe"}, "label"),
        ({"calls": "nope"}, "calls"),
        ({"calls": [{"arguments": {}, "response": ""}]}, "calls[0].tool"),
        ({"calls": [{"tool": "x", "arguments": 7, "response": ""}]}, "calls[0].arguments"),
    ],
)
def test_malformed_record_names_field(overrides, field):
    """
    Testing Endpoint 2: parse errors name the offending field

    REAL TEST - Each malformed record raises SessionParseError with .field set.
    """
    with pytest.raises(SessionParseError) as exc:
        parse_session_line(_line(**overrides))
    assert exc.value.field == field


@pytest.mark.pr01
@pytest.mark.parametrize(
    "line, field",
    [
        ('{"session_id": "s-1", "source": "x", "label": "benign", '
         '"calls": [{"tool": "t", "arguments": "\\ud800", "response": ""}]}', "calls[0].arguments"),
        ('{"session_id": "s-1", "source": "x", "label": "benign", '
         '"calls": [{"tool": "t", "arguments": {"q": "a\\udfff"}, "response": ""}]}', "calls[0].arguments.q"),
        ('{"session_id": "s-1", "source": "x", "label": "benign", '
         '"calls": [{"tool": "t", "arguments": {}, "response": "\\ud83d"}]}', "calls[0].response"),
    ],
)
def test_lone_surrogates_rejected(line, field):
    """
    REAL TEST - Valid JSON escapes that decode to lone surrogates cannot be
    featurized or written back as UTF-8, so parsing rejects them.
    """
    with pytest.raises(SessionParseError) as exc:
        parse_session_line(line)
    assert exc.value.field == field


@pytest.mark.pr01
def test_adapter_rejects_lone_surrogates():
    raw = {"id": "a", "tool_calls": [{"name": "fetch", "args": {"url": "\ud800"}, "result": "ok"}]}
    with pytest.raises(SessionParseError):
        adapt_record(raw, "ras_eval")
    # a proper surrogate pair is an ordinary character
    assert parse_session_line(_line(calls=[{"tool": "t", "arguments": {}, "response": "\U0001F600"}]))


@pytest.mark.pr01
def test_invalid_json_line():
    with pytest.raises(SessionParseError):
        parse_session_line("{not json")


@pytest.mark.pr01
def test_empty_calls_rejected():
    with pytest.raises(SessionValidationError):
        parse_session_line(_line(calls=[]))


@pytest.mark.pr01
def test_attack_mode_on_benign_rejected():
    with pytest.raises(SessionValidationError):
        parse_session_line(_line(label="benign", attack_mode="tool_input"))


@pytest.mark.pr01
def test_other_mode_cannot_shadow_threat_mode():
    with pytest.raises(SessionValidationError):
        AttackMode(AttackModeKind.OTHER, "both")


@pytest.mark.pr01
def test_canonical_args_keeps_plain_strings():
    assert canonical_args("plain text") == "plain text"
    assert canonical_args('{"b": 1, "a": 2}') == '{"a":2,"b":1}'
    assert canonical_args([3, {"z": 1}]) == '[3,{"z":1}]'


@pytest.mark.pr01
def test_read_sessions_skip_bad(tmp_path):
    """Skipping reports each bad line; strict mode raises on the first one."""
    path = tmp_path / "corpus.jsonl"
    path.write_text(_line() + "\n" + "{broken\n" + _line(session_id="s-2") + "\n", encoding="utf-8")

    with pytest.raises(SessionParseError):
        read_sessions(path)

    skipped = []
    sessions = read_sessions(path, skip_bad=True, skipped=skipped)
    assert [s.session_id for s in sessions] == ["s-1", "s-2"]
    assert skipped and skipped[0]["line"] == 2


@pytest.mark.pr01
def test_duplicate_session_ids_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    path.write_text(_line() + "\n" + _line() + "\n", encoding="utf-8")
    with pytest.raises(SessionValidationError):
        read_sessions(path)


@pytest.mark.pr01
def test_write_then_read_file(tmp_path, make_session):
    sessions = [
        make_session("a", [("t1", '{"x":1}', "r1")], task_id="k"),
        make_session("b", [("t2", "{}", "")], label="attack", mode="both"),
    ]
    path = tmp_path / "out.jsonl"
    assert write_sessions(path, sessions) == 2
    assert read_sessions(path) == sessions


@pytest.mark.pr01
def test_ras_eval_adapter():
    """
    Testing Endpoint 3: raw RAS-Eval style records are normalized

    REAL TEST - Attack tags are mapped through the alias table.
    """
    raw = {
        "id": 17,
        "task": "t-9",
        "is_attack": True,
        "attack_type": "output_attack",
        "tool_calls": [
            {"name": "fetch", "args": {"url": "x"}, "result": [{"type": "text", "text": "hello"}]},
            {"tool": "write", "parameters": {"path": "/tmp/a"}, "output": {"ok": True}},
        ],
    }
    session = adapt_record(raw, "ras_eval")
    assert session.session_id == "17"
    assert session.task_id == "t-9"
    assert session.label == Label.ATTACK
    assert session.attack_category == "tool_output"
    assert session.calls[0].response_text == "hello"
    assert session.calls[1].response_text == '{"ok":true}'


@pytest.mark.pr01
def test_atbench_adapter_pairs_observations():
    raw = {
        "id": "at-1",
        "label": "unsafe",
        "risk_source": "tool_input",
        "trajectory": [
            {"role": "user", "content": "do it"},
            {"role": "assistant", "action": {"name": "lookup", "arguments": {"k": 1}}},
            {"role": "tool", "content": "found"},
            {"role": "assistant", "tool_call": {"name": "store", "arguments": {}}, "observation": "ok"},
        ],
    }
    session = adapt_record(raw, "atbench")
    assert session.task_id is None
    assert [c.tool_name for c in session.calls] == ["lookup", "store"]
    assert [c.response_text for c in session.calls] == ["found", "ok"]
    assert session.attack_category == "tool_input"


@pytest.mark.pr01
def test_mcpbench_adapter_is_benign():
    raw = {
        "trajectory_id": "mcp-1",
        "messages": [
            {"role": "assistant", "tool_calls": [
                {"id": "c1", "function": {"name": "geo", "arguments": "{\"city\": \"Oslo\"}"}},
            ]},
            {"role": "tool", "tool_call_id": "c1", "content": "59.9N"},
        ],
    }
    session = adapt_record(raw, "mcpbench")
    assert session.label == Label.BENIGN
    assert session.calls[0].args_text == '{"city":"Oslo"}'
    assert session.calls[0].response_text == "59.9N"


@pytest.mark.pr01
def test_trajectory_without_calls_is_skipped():
    with pytest.raises(NoToolCallsSkip):
        adapt_record({"id": "x", "label": "safe", "tool_calls": []}, "ras_eval")


@pytest.mark.pr01
def test_unknown_source_rejected():
    assert "ras_eval" in VALID_SOURCES
    with pytest.raises(AdapterConfigError):
        adapt_record({"id": "x"}, "nonexistent")


@pytest.mark.pr01
def test_iter_raw_records_json_array(tmp_path):
    path = tmp_path / "raw.json"
    path.write_text(json.dumps([{"a": 1}, {"b": 2}]), encoding="utf-8")
    assert [r for _, r in iter_raw_records(path)] == [{"a": 1}, {"b": 2}]


@pytest.mark.pr01
def test_iter_raw_records_yields_parse_errors(tmp_path):
    path = tmp_path / "raw.jsonl"
    path.write_text('{"a": 1}\n{oops\n', encoding="utf-8")
    records = list(iter_raw_records(path))
    assert records[0] == (1, {"a": 1})
    assert records[1][0] == 2 and isinstance(records[1][1], SessionParseError)


@pytest.mark.pr01
def test_corpus_stats_and_vocabulary(make_session):
    """
    Testing Endpoint 4: statistics cover every session

    REAL TEST - by_attack_mode totals n_sessions, benign sessions under "none".
    """
    sessions = [
        make_session("a", [("b_tool", "{}", "")], task_id="t1"),
        make_session("b", [("a_tool", "{}", ""), ("b_tool", "{}", "")], label="attack",
                     task_id="t1", mode="tool_input"),
        make_session("c", [("c_tool", "{}", "")], label="attack", task_id="t2", mode="exfil"),
    ]
    stats = corpus_stats(sessions)
    assert stats.n_sessions == 3
    assert stats.by_label == {"benign": 1, "attack": 2}
    assert stats.by_attack_mode == {"exfil": 1, "none": 1, "tool_input": 1}
    assert sum(stats.by_attack_mode.values()) == stats.n_sessions
    assert stats.n_tasks == 2
    assert stats.n_tools == 3

    vocab = build_tool_vocabulary(sessions)
    assert vocab.names == ("a_tool", "b_tool", "c_tool")
    assert vocab.position("c_tool") == 2
    assert vocab.position("unknown") is None


@pytest.mark.pr01
def test_merge_corpora_namespaces_collisions(make_session):
    left = [make_session("x", [("t", "{}", "")], task_id="k", source="ras_eval")]
    right = [make_session("x", [("t", "{}", "")], source="atbench")]
    merged = merge_corpora([left, right])
    assert [s.session_id for s in merged] == ["ras_eval:x", "atbench:x"]
    assert all(s.task_id is None for s in merged)
