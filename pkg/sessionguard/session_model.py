"""
PR 01 — Session Model & Adapters

Canonical session data model plus adapters that normalize raw agent
trajectories from heterogeneous benchmark releases.

Normalized session format (one JSON object per line, UTF-8, LF):
    {"session_id": str, "source": str, "task_id": str|null,
     "label": "benign"|"attack", "attack_mode": str|null,
     "calls": [{"tool": str, "arguments": object|str, "response": str}]}

attack_mode is "tool_input", "tool_output", "both", or any other string,
which is kept verbatim as a free-form category.

Registered adapters: ras_eval, atbench, mcpbench, normalized.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple


logger = logging.getLogger("sessionguard.session_model")


class SessionModelError(Exception):
    """Raised when a session record cannot be turned into a Session"""
    pass


class SessionParseError(SessionModelError):
    """Raised when a record is malformed; `field` names the offending field"""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class SessionValidationError(SessionModelError):
    """Raised when a well-formed record violates a session invariant"""
    pass


class AdapterConfigError(SessionModelError):
    """Raised when no adapter is registered for a source tag"""
    pass


class NoToolCallsSkip(Exception):
    """Signal (not an error): the trajectory has no extractable tool calls"""
    pass


class Label(str, Enum):
    BENIGN = "benign"
    ATTACK = "attack"


class AttackModeKind(str, Enum):
    TOOL_INPUT = "tool_input"
    TOOL_OUTPUT = "tool_output"
    BOTH = "both"
    OTHER = "other"


THREAT_MODES = [AttackModeKind.TOOL_INPUT.value, AttackModeKind.TOOL_OUTPUT.value, AttackModeKind.BOTH.value]


@dataclass(frozen=True)
class AttackMode:
    """One of the three threat-model modes, or other(category)."""

    kind: AttackModeKind
    category: Optional[str] = None

    def __post_init__(self):
        if self.kind == AttackModeKind.OTHER:
            if not self.category:
                raise SessionValidationError("attack_mode other() requires a category")
            if self.category in THREAT_MODES:
                raise SessionValidationError(
                    f"category {self.category!r} collides with a threat-model mode"
                )
        elif self.category is not None:
            raise SessionValidationError("only attack_mode other() carries a category")

    @classmethod
    def parse(cls, value: str) -> "AttackMode":
        if value in THREAT_MODES:
            return cls(AttackModeKind(value))
        return cls(AttackModeKind.OTHER, value)

    @property
    def name(self) -> str:
        """Category string: the mode value, or the free-form category for other()."""
        return self.category if self.kind == AttackModeKind.OTHER else self.kind.value

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ToolCall:
    index: int
    tool_name: str
    args_text: str
    response_text: str
    response_length: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "response_length", len(self.response_text))


@dataclass(frozen=True)
class Session:
    session_id: str
    source: str
    label: Label
    calls: Tuple[ToolCall, ...]
    task_id: Optional[str] = None
    attack_mode: Optional[AttackMode] = None

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "calls", tuple(self.calls))
        if not self.calls:
            raise SessionValidationError(f"session {self.session_id}: calls must be non-empty")
        for position, call in enumerate(self.calls):
            if call.index != position:
                raise SessionValidationError(
                    f"session {self.session_id}: call index {call.index} at position {position}"
                )
        if self.attack_mode is not None and self.label != Label.ATTACK:
            raise SessionValidationError(
                f"session {self.session_id}: attack_mode present on a benign session"
            )

    @property
    def is_attack(self) -> bool:
        return self.label == Label.ATTACK

    @property
    def attack_category(self) -> Optional[str]:
        return self.attack_mode.name if self.attack_mode is not None else None


@dataclass(frozen=True)
class ToolVocab:
    """Sorted distinct tool names; fixes the one-hot width n_tools."""

    names: Tuple[str, ...]
    _positions: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise SessionValidationError("tool vocabulary names must be distinct")
        object.__setattr__(self, "_positions", {n: i for i, n in enumerate(self.names)})

    @property
    def n_tools(self) -> int:
        return len(self.names)

    def position(self, tool_name: str) -> Optional[int]:
        return self._positions.get(tool_name)

    def to_dict(self) -> Dict:
        return {"names": list(self.names)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ToolVocab":
        return cls(tuple(data["names"]))


@dataclass
class CorpusStats:
    n_sessions: int
    by_label: Dict[str, int]
    by_source: Dict[str, int]
    by_attack_mode: Dict[str, int]
    n_tasks: int
    n_tools: int

    def to_dict(self) -> Dict:
        return {
            "n_sessions": self.n_sessions,
            "by_label": dict(self.by_label),
            "by_source": dict(self.by_source),
            "by_attack_mode": dict(self.by_attack_mode),
            "n_tasks": self.n_tasks,
            "n_tools": self.n_tools,
        }


# ---------------------------------------------------------------------------
# Normalized format
# ---------------------------------------------------------------------------


def canonical_args(arguments: Any) -> str:
    """
    Canonical argument serialization: sorted keys, no insignificant whitespace.

    Strings that decode to a JSON object or array are re-serialized canonically;
    any other string is already the serialized form and is kept verbatim.
    """
    if isinstance(arguments, str):
        try:
            decoded = json.loads(arguments)
        except (json.JSONDecodeError, ValueError):
            return arguments
        if not isinstance(decoded, (dict, list)):
            return arguments
        arguments = decoded
    return json.dumps(arguments, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _require(record: Mapping, key: str, kind: type, where: str = "") -> Any:
    name = f"{where}{key}"
    if key not in record:
        raise SessionParseError(name, "missing")
    value = record[key]
    if not isinstance(value, kind):
        raise SessionParseError(name, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _optional_str(record: Mapping, key: str) -> Optional[str]:
    value = record.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise SessionParseError(key, f"expected string or null, got {type(value).__name__}")
    return value


def _check_utf8(value: Any, where: str) -> None:
    """Reject strings that cannot be written as UTF-8 (lone surrogates from \\ud800-style escapes)."""
    if isinstance(value, str):
        try:
            value.encode("utf-8")
        except UnicodeEncodeError:
            raise SessionParseError(where, "text is not encodable as UTF-8 (lone surrogate)")
    elif isinstance(value, Mapping):
        for key, item in value.items():
            _check_utf8(key, where)
            _check_utf8(item, f"{where}.{key}" if where != "<record>" else str(key))
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_utf8(item, f"{where}[{i}]")


def session_from_record(record: Any) -> Session:
    """Build a Session from an already-decoded normalized record."""
    if not isinstance(record, dict):
        raise SessionParseError("<record>", "expected a JSON object")
    _check_utf8(record, "<record>")

    session_id = _require(record, "session_id", str)
    if not session_id:
        raise SessionParseError("session_id", "must be non-empty")
    source = _require(record, "source", str)
    label_text = _require(record, "label", str)
    if label_text not in (Label.BENIGN.value, Label.ATTACK.value):
        raise SessionParseError("label", f"expected 'benign' or 'attack', got {label_text!r}")
    task_id = _optional_str(record, "task_id")
    mode_text = _optional_str(record, "attack_mode")
    raw_calls = _require(record, "calls", list)

    calls = []
    for i, raw_call in enumerate(raw_calls):
        where = f"calls[{i}]."
        if not isinstance(raw_call, dict):
            raise SessionParseError(f"calls[{i}]", "expected a JSON object")
        tool = _require(raw_call, "tool", str, where)
        if "arguments" not in raw_call:
            raise SessionParseError(f"{where}arguments", "missing")
        arguments = raw_call["arguments"]
        if not isinstance(arguments, (dict, list, str)):
            raise SessionParseError(f"{where}arguments", "expected object or string")
        response = _require(raw_call, "response", str, where)
        calls.append(ToolCall(i, tool, canonical_args(arguments), response))

    attack_mode = AttackMode.parse(mode_text) if mode_text else None
    return Session(
        session_id=session_id,
        source=source,
        label=Label(label_text),
        calls=tuple(calls),
        task_id=task_id,
        attack_mode=attack_mode,
    )


def parse_session_line(line: str) -> Session:
    """
    Parse one normalized session line.

    Raises:
        SessionParseError: malformed record (names the offending field)
        SessionValidationError: empty calls, or attack_mode on a benign session
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise SessionParseError("<record>", f"invalid JSON: {e.msg}")
    return session_from_record(record)


def session_to_record(session: Session) -> Dict:
    return {
        "session_id": session.session_id,
        "source": session.source,
        "task_id": session.task_id,
        "label": session.label.value,
        "attack_mode": session.attack_mode.name if session.attack_mode else None,
        "calls": [
            {"tool": c.tool_name, "arguments": c.args_text, "response": c.response_text}
            for c in session.calls
        ],
    }


def serialize_session(session: Session) -> str:
    return json.dumps(session_to_record(session), sort_keys=True, ensure_ascii=False)


def check_unique_ids(sessions: Sequence[Session]) -> None:
    counts = Counter(s.session_id for s in sessions)
    duplicates = sorted(k for k, v in counts.items() if v > 1)
    if duplicates:
        raise SessionValidationError(f"duplicate session_id(s): {duplicates[:5]}")


def read_sessions(
    path: Path,
    skip_bad: bool = False,
    skipped: Optional[List[Dict]] = None,
) -> List[Session]:
    """
    Read a normalized session file.

    Args:
        path: JSONL file in the normalized format
        skip_bad: log and skip unparseable lines instead of raising
        skipped: optional list that receives {"line", "error"} for each skip
    """
    sessions: List[Session] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                sessions.append(parse_session_line(line))
            except SessionModelError as e:
                if not skip_bad:
                    raise SessionParseError(f"line {line_no}", str(e))
                logger.warning("skipping line %d of %s: %s", line_no, path, e)
                if skipped is not None:
                    skipped.append({"line": line_no, "error": str(e)})
    check_unique_ids(sessions)
    return sessions


def write_sessions(path: Path, sessions: Iterable[Session]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for session in sessions:
            f.write(serialize_session(session) + "\n")
            count += 1
    return count


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------

# Raw attack-mode tags seen across releases, mapped onto the threat-model modes.
# Any unlisted tag is retained as other(tag).
MODE_TAG_ALIASES = {
    "tool_input": "tool_input",
    "input": "tool_input",
    "input_attack": "tool_input",
    "tool_input_attack": "tool_input",
    "tool_output": "tool_output",
    "output": "tool_output",
    "output_attack": "tool_output",
    "tool_output_attack": "tool_output",
    "both": "both",
    "combined": "both",
    "input_output": "both",
    "tool_input_output": "both",
}

_ATTACK_LABELS = {"attack", "unsafe", "malicious", "1", "true"}
_BENIGN_LABELS = {"benign", "safe", "normal", "0", "false"}


def _raw_label(raw: Mapping, where: str) -> Optional[bool]:
    for key in ("label", "is_attack", "unsafe"):
        if key in raw and raw[key] is not None:
            value = str(raw[key]).strip().lower()
            if value in _ATTACK_LABELS:
                return True
            if value in _BENIGN_LABELS:
                return False
            raise SessionParseError(f"{where}{key}", f"unrecognized label {raw[key]!r}")
    return None


def _raw_id(raw: Mapping, keys: Sequence[str]) -> str:
    for key in keys:
        if raw.get(key) not in (None, ""):
            return str(raw[key])
    raise SessionParseError(keys[0], "missing")


def _response_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, list):
        # MCP content blocks: [{"type": "text", "text": ...}, ...]
        parts = []
        for block in value:
            if isinstance(block, dict) and "text" in block:
                parts.append(str(block["text"]))
            else:
                parts.append(canonical_args(block) if isinstance(block, (dict, list)) else str(block))
        return "\n".join(parts)
    return canonical_args(value) if isinstance(value, dict) else str(value)


def _build_calls(pairs: Sequence[Tuple[str, Any, Any]]) -> Tuple[ToolCall, ...]:
    return tuple(
        ToolCall(i, name, canonical_args(args if args is not None else {}), _response_text(resp))
        for i, (name, args, resp) in enumerate(pairs)
    )


def _adapt_ras_eval(raw: Mapping) -> Session:
    """
    MCP-native records: {"id"|"session_id", "task_id"|"task", "label"|"is_attack",
    "attack_type"|"attack_mode"|"mode", "tool_calls": [{"name"|"tool",
    "arguments"|"args"|"parameters", "response"|"result"|"output"}]}.
    """
    session_id = _raw_id(raw, ("session_id", "id"))
    task = raw.get("task_id", raw.get("task"))
    tag = next(
        (raw[k] for k in ("attack_mode", "attack_type", "mode") if raw.get(k) not in (None, "")),
        None,
    )
    is_attack = _raw_label(raw, "")
    if is_attack is None:
        is_attack = tag is not None

    raw_calls = raw.get("tool_calls", raw.get("calls"))
    if raw_calls is None:
        raw_calls = []
    if not isinstance(raw_calls, list):
        raise SessionParseError("tool_calls", "expected a list")

    pairs = []
    for i, call in enumerate(raw_calls):
        if not isinstance(call, dict):
            raise SessionParseError(f"tool_calls[{i}]", "expected an object")
        name = call.get("name", call.get("tool"))
        if not isinstance(name, str) or not name:
            raise SessionParseError(f"tool_calls[{i}].name", "missing")
        args = next((call[k] for k in ("arguments", "args", "parameters") if k in call), {})
        resp = next((call[k] for k in ("response", "result", "output") if k in call), "")
        pairs.append((name, args, resp))
    if not pairs:
        raise NoToolCallsSkip(session_id)

    mode = None
    if is_attack and tag is not None:
        tag_text = str(tag).strip().lower()
        mode = AttackMode.parse(MODE_TAG_ALIASES.get(tag_text, tag_text))
    return Session(
        session_id=session_id,
        source="ras_eval",
        label=Label.ATTACK if is_attack else Label.BENIGN,
        calls=_build_calls(pairs),
        task_id=str(task) if task not in (None, "") else None,
        attack_mode=mode,
    )


def _adapt_atbench(raw: Mapping) -> Session:
    """
    Curated trajectories: {"id", "label": "safe"|"unsafe"|0|1,
    "risk_source"|"category", "trajectory": [step, ...]} where a step carrying
    "tool_call"/"action" {"name", "arguments"} opens a call and the next step
    with role tool/environment (or an "observation" key) supplies its response.
    ATBench has no shared task structure, so task_id is always null.
    """
    session_id = _raw_id(raw, ("id", "session_id"))
    is_attack = _raw_label(raw, "")
    if is_attack is None:
        raise SessionParseError("label", "missing")
    category = raw.get("risk_source", raw.get("category"))

    steps = raw.get("trajectory", raw.get("contents", []))
    if not isinstance(steps, list):
        raise SessionParseError("trajectory", "expected a list")

    pairs: List[List[Any]] = []
    for i, step in enumerate(steps):
        if not isinstance(step, dict):
            raise SessionParseError(f"trajectory[{i}]", "expected an object")
        action = step.get("tool_call", step.get("action"))
        if isinstance(action, dict) and action.get("name"):
            pairs.append([str(action["name"]), action.get("arguments", {}), ""])
            if "observation" in step:
                pairs[-1][2] = step["observation"]
            continue
        is_observation = step.get("role") in ("tool", "environment") or "observation" in step
        if is_observation and pairs and pairs[-1][2] == "":
            pairs[-1][2] = step.get("observation", step.get("content", ""))
    if not pairs:
        raise NoToolCallsSkip(session_id)

    mode = None
    if is_attack and category not in (None, ""):
        mode = AttackMode.parse(str(category).strip())
    return Session(
        session_id=session_id,
        source="atbench",
        label=Label.ATTACK if is_attack else Label.BENIGN,
        calls=_build_calls([tuple(p) for p in pairs]),
        task_id=None,
        attack_mode=mode,
    )


def _adapt_mcpbench(raw: Mapping) -> Session:
    """
    Benign chat-format trajectories: {"id"|"trajectory_id", "messages": [...]}
    with OpenAI-style assistant "tool_calls" ({"id", "function": {"name",
    "arguments"}}) answered by role "tool" messages keyed by tool_call_id.
    """
    session_id = _raw_id(raw, ("id", "trajectory_id", "session_id"))
    messages = raw.get("messages", [])
    if not isinstance(messages, list):
        raise SessionParseError("messages", "expected a list")

    pairs: List[List[Any]] = []
    by_call_id: Dict[str, int] = {}
    for i, message in enumerate(messages):
        if not isinstance(message, dict):
            raise SessionParseError(f"messages[{i}]", "expected an object")
        if message.get("role") == "assistant":
            for call in message.get("tool_calls") or []:
                function = call.get("function", {}) if isinstance(call, dict) else {}
                name = function.get("name")
                if not name:
                    raise SessionParseError(f"messages[{i}].tool_calls", "function.name missing")
                by_call_id[str(call.get("id", len(pairs)))] = len(pairs)
                pairs.append([name, function.get("arguments", {}), ""])
        elif message.get("role") == "tool":
            position = by_call_id.get(str(message.get("tool_call_id")))
            if position is not None:
                pairs[position][2] = message.get("content", "")
    if not pairs:
        raise NoToolCallsSkip(session_id)

    task = raw.get("task_id")
    return Session(
        session_id=session_id,
        source="mcpbench",
        label=Label.BENIGN,
        calls=_build_calls([tuple(p) for p in pairs]),
        task_id=str(task) if task not in (None, "") else None,
    )


def _adapt_normalized(raw: Mapping) -> Session:
    if isinstance(raw, dict) and raw.get("calls") == []:
        raise NoToolCallsSkip(str(raw.get("session_id")))
    return session_from_record(raw)


ADAPTERS: Dict[str, Callable[[Mapping], Session]] = {
    "ras_eval": _adapt_ras_eval,
    "atbench": _adapt_atbench,
    "mcpbench": _adapt_mcpbench,
    "normalized": _adapt_normalized,
}

VALID_SOURCES = sorted(ADAPTERS)


def adapt_record(raw: Mapping, source: str) -> Session:
    """
    Normalize one foreign trajectory record.

    Raises:
        AdapterConfigError: no adapter registered for `source`
        NoToolCallsSkip: the trajectory has no extractable tool calls
        SessionParseError / SessionValidationError: malformed record
    """
    adapter = ADAPTERS.get(source)
    if adapter is None:
        raise AdapterConfigError(f"source must be one of {VALID_SOURCES}, got: {source}")
    if not isinstance(raw, Mapping):
        raise SessionParseError("<record>", "expected a JSON object")
    _check_utf8(raw, "<record>")
    return adapter(raw)


def iter_raw_records(path: Path) -> Iterator[Tuple[int, Any]]:
    """
    Yield (line_no, record) from a JSONL file or a JSON array file.

    Undecodable lines are yielded as (line_no, SessionParseError).
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if text.lstrip().startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as e:
            yield 1, SessionParseError("<file>", f"invalid JSON array: {e.msg}")
            return
        for i, record in enumerate(records, start=1):
            yield i, record
        return
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield line_no, json.loads(line)
        except json.JSONDecodeError as e:
            yield line_no, SessionParseError("<record>", f"invalid JSON: {e.msg}")


def build_tool_vocabulary(sessions: Sequence[Session]) -> ToolVocab:
    """Sorted distinct tool names over all calls of the (training) sessions."""
    if not sessions:
        raise SessionValidationError("cannot build a tool vocabulary from zero sessions")
    names = {call.tool_name for s in sessions for call in s.calls}
    return ToolVocab(tuple(sorted(names)))


def corpus_stats(sessions: Sequence[Session]) -> CorpusStats:
    """
    Dataset statistics. by_attack_mode counts every session; sessions without
    a mode fall under "none", so each breakdown totals n_sessions.
    """
    by_label = {Label.BENIGN.value: 0, Label.ATTACK.value: 0}
    by_source: Counter = Counter()
    by_mode: Counter = Counter()
    tasks = set()
    tools = set()
    for s in sessions:
        by_label[s.label.value] += 1
        by_source[s.source] += 1
        by_mode[s.attack_category or "none"] += 1
        if s.task_id is not None:
            tasks.add(s.task_id)
        tools.update(c.tool_name for c in s.calls)
    return CorpusStats(
        n_sessions=len(sessions),
        by_label=by_label,
        by_source=dict(sorted(by_source.items())),
        by_attack_mode=dict(sorted(by_mode.items())),
        n_tasks=len(tasks),
        n_tools=len(tools),
    )


def merge_corpora(corpora: Sequence[Sequence[Session]], drop_task_ids: bool = True) -> List[Session]:
    """
    Combine several corpora into one multi-source corpus.

    Colliding session ids are namespaced as "<source>:<id>". Task ids are
    dropped by default because sources share no task structure, which sends
    the combined corpus to label-stratified splits.
    """
    merged: List[Session] = []
    seen = Counter(s.session_id for corpus in corpora for s in corpus)
    for corpus in corpora:
        for s in corpus:
            session_id = s.session_id
            if seen[session_id] > 1:
                session_id = f"{s.source}:{session_id}"
            merged.append(
                Session(
                    session_id=session_id,
                    source=s.source,
                    label=s.label,
                    calls=s.calls,
                    task_id=None if drop_task_ids else s.task_id,
                    attack_mode=s.attack_mode,
                )
            )
    check_unique_ids(merged)
    return merged


__all__ = [
    "SessionModelError",
    "SessionParseError",
    "SessionValidationError",
    "AdapterConfigError",
    "NoToolCallsSkip",
    "Label",
    "AttackModeKind",
    "AttackMode",
    "THREAT_MODES",
    "ToolCall",
    "Session",
    "ToolVocab",
    "CorpusStats",
    "VALID_SOURCES",
    "canonical_args",
    "parse_session_line",
    "serialize_session",
    "session_from_record",
    "session_to_record",
    "read_sessions",
    "write_sessions",
    "adapt_record",
    "iter_raw_records",
    "build_tool_vocabulary",
    "corpus_stats",
    "merge_corpora",
    "check_unique_ids",
]
