"""
PR 08 — Synthetic Corpus

Deterministic, task-structured corpus for desk-scale experiments.

Each task owns a distinct tool subset and small pools of argument and
response templates, so its benign content embeddings sit on a handful of
fixed points. Templates are longer than the embedding truncation window:
the varying parts of a call (reference token, trace id, response tail) fall
past it, so embeddings repeat per template while the argument hash and the
response length still vary.

Attacks substitute texts from a shared attack pool:
- tool_input:  argument templates of some calls
- tool_output: response templates of some calls
- both:        both channels
A mode's strength is the probability that an attack session of that mode
carries its substitution; strength 0 makes attacks indistinguishable.

task_attack_skew moves half the tasks to attack prevalence
attack_fraction + skew/2 and the other half to attack_fraction - skew/2,
which lets task identity predict the label (leakage-prone corpus).
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping

import numpy as np

from sessionguard.seeding import numpy_rng
from sessionguard.session_model import AttackMode, Label, Session, ToolCall, THREAT_MODES


class SyntheticCorpusError(Exception):
    """Raised when a synthetic corpus spec is inconsistent"""
    pass


SYLLABLES = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "xe", "zu", "bra", "cli", "dro", "fen",
    "gar", "hul", "jin", "kor", "lem", "mar", "nox", "pel", "qua", "ris", "sol", "tor",
    "ung", "vel", "wix", "yar",
]
SOURCE = "synthetic"
QUERY_CHARS = 600
RESPONSE_CHARS = 540
MAX_TAIL_CHARS = 300


@dataclass
class SyntheticSpec:
    n_tasks: int = 20
    sessions_per_task: int = 10
    attack_fraction: float = 0.5
    tools_per_task: int = 3
    min_calls: int = 2
    max_calls: int = 5
    mode_weights: Dict[str, float] = field(default_factory=lambda: {m: 1.0 for m in THREAT_MODES})
    mode_strengths: Dict[str, float] = field(default_factory=lambda: {m: 1.0 for m in THREAT_MODES})
    task_attack_skew: float = 0.0
    templates_per_task: int = 4
    attack_pool_size: int = 6
    word_pool_size: int = 300

    def validate(self) -> None:
        if self.n_tasks < 1 or self.sessions_per_task < 1:
            raise SyntheticCorpusError("n_tasks and sessions_per_task must be >= 1")
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise SyntheticCorpusError(f"attack_fraction must be in [0, 1], got: {self.attack_fraction}")
        if self.tools_per_task < 1:
            raise SyntheticCorpusError(f"tools_per_task must be >= 1, got: {self.tools_per_task}")
        if not 1 <= self.min_calls <= self.max_calls:
            raise SyntheticCorpusError(
                f"need 1 <= min_calls <= max_calls, got: {self.min_calls}, {self.max_calls}"
            )
        for table in ("mode_weights", "mode_strengths"):
            unknown = set(getattr(self, table)) - set(THREAT_MODES)
            if unknown:
                raise SyntheticCorpusError(f"{table} keys must be in {THREAT_MODES}, got: {sorted(unknown)}")
        if any(w < 0 for w in self.mode_weights.values()) or sum(self.mode_weights.values()) <= 0:
            raise SyntheticCorpusError("mode_weights must be non-negative with a positive sum")
        if any(not 0.0 <= s <= 1.0 for s in self.mode_strengths.values()):
            raise SyntheticCorpusError("mode_strengths must lie in [0, 1]")
        low = self.attack_fraction - self.task_attack_skew / 2
        high = self.attack_fraction + self.task_attack_skew / 2
        if self.task_attack_skew < 0 or low < -1e-9 or high > 1 + 1e-9:
            raise SyntheticCorpusError(
                f"task_attack_skew {self.task_attack_skew} pushes prevalence outside [0, 1]"
            )
        if self.templates_per_task < 1 or self.attack_pool_size < 1:
            raise SyntheticCorpusError("templates_per_task and attack_pool_size must be >= 1")
        if self.word_pool_size < 10:
            raise SyntheticCorpusError(f"word_pool_size must be >= 10, got: {self.word_pool_size}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SyntheticCorpusError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**dict(data))


def leakage_prone_spec(**overrides) -> SyntheticSpec:
    """Tasks skewed to 10% / 90% attack prevalence."""
    values = {"task_attack_skew": 0.8}
    values.update(overrides)
    return SyntheticSpec(**values)


def calibrated_mode_spec(**overrides) -> SyntheticSpec:
    """Per-mode strengths ordered both > tool_output > tool_input."""
    values = {"mode_strengths": {"tool_input": 0.3, "tool_output": 0.65, "both": 0.95}, "n_tasks": 30}
    values.update(overrides)
    return SyntheticSpec(**values)


def _word_pool(size: int, rng: np.random.Generator) -> List[str]:
    words: List[str] = []
    seen = set()
    while len(words) < size:
        word = "".join(rng.choice(SYLLABLES, size=int(rng.integers(2, 5))))
        if len(word) >= 5 and word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _text(words: List[str], min_chars: int, rng: np.random.Generator) -> str:
    parts: List[str] = []
    length = -1
    while length < min_chars:
        word = words[int(rng.integers(len(words)))]
        parts.append(word)
        length += len(word) + 1
    return " ".join(parts)


def _args(query: str, ref: str, rng: np.random.Generator) -> str:
    payload = {"query": query, "ref": ref, "trace": f"{int(rng.integers(0, 2 ** 32)):08x}"}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _response(template: str, words: List[str], rng: np.random.Generator) -> str:
    tail = _text(words, int(rng.integers(1, MAX_TAIL_CHARS)), rng)
    return f"{template} {tail}"[:1000]


def _task_prevalence(spec: SyntheticSpec, rng: np.random.Generator) -> List[float]:
    high = set(rng.permutation(spec.n_tasks)[: spec.n_tasks // 2].tolist())
    half = spec.task_attack_skew / 2
    return [
        min(1.0, max(0.0, spec.attack_fraction + (half if t in high else -half)))
        for t in range(spec.n_tasks)
    ]


def _substituted_calls(n_calls: int, rng: np.random.Generator) -> np.ndarray:
    chosen = rng.random(n_calls) < 0.5
    if not chosen.any():
        chosen[int(rng.integers(n_calls))] = True
    return chosen


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int = 42) -> List[Session]:
    """Deterministic in (spec, seed)."""
    spec.validate()
    rng = numpy_rng(seed, "corpus")
    words = _word_pool(spec.word_pool_size, rng)
    attack_queries = [_text(words, QUERY_CHARS, rng) for _ in range(spec.attack_pool_size)]
    attack_responses = [_text(words, RESPONSE_CHARS, rng) for _ in range(spec.attack_pool_size)]
    modes = [m for m in THREAT_MODES if spec.mode_weights.get(m, 0.0) > 0]
    weights = np.asarray([spec.mode_weights[m] for m in modes], dtype=np.float64)
    weights = weights / weights.sum()
    prevalence = _task_prevalence(spec, rng)

    sessions: List[Session] = []
    for t in range(spec.n_tasks):
        tools = [f"t{t:03d}_{w}" for w in rng.choice(words, size=spec.tools_per_task, replace=False)]
        queries = [_text(words, QUERY_CHARS, rng) for _ in range(spec.templates_per_task)]
        responses = [_text(words, RESPONSE_CHARS, rng) for _ in range(spec.templates_per_task)]
        n_attack = int(round(prevalence[t] * spec.sessions_per_task))
        is_attack = np.zeros(spec.sessions_per_task, dtype=bool)
        is_attack[rng.permutation(spec.sessions_per_task)[:n_attack]] = True

        for i in range(spec.sessions_per_task):
            n_calls = int(rng.integers(spec.min_calls, spec.max_calls + 1))
            mode = None
            swap_args = np.zeros(n_calls, dtype=bool)
            swap_response = np.zeros(n_calls, dtype=bool)
            if is_attack[i]:
                mode = modes[int(rng.choice(len(modes), p=weights))]
                if rng.random() < spec.mode_strengths.get(mode, 0.0):
                    if mode in ("tool_input", "both"):
                        swap_args = _substituted_calls(n_calls, rng)
                    if mode in ("tool_output", "both"):
                        swap_response = _substituted_calls(n_calls, rng)

            calls: List[ToolCall] = []
            ref = ""
            for k in range(n_calls):
                pool_q = attack_queries if swap_args[k] else queries
                pool_r = attack_responses if swap_response[k] else responses
                query = pool_q[int(rng.integers(len(pool_q)))]
                response = _response(pool_r[int(rng.integers(len(pool_r)))], words, rng)
                calls.append(ToolCall(
                    index=k,
                    tool_name=tools[int(rng.integers(len(tools)))],
                    args_text=_args(query, ref, rng),
                    response_text=response,
                ))
                ref = response.split()[0]

            sessions.append(Session(
                session_id=f"syn-{t:03d}-{i:03d}",
                source=SOURCE,
                label=Label.ATTACK if is_attack[i] else Label.BENIGN,
                calls=tuple(calls),
                task_id=f"task-{t:03d}",
                attack_mode=AttackMode.parse(mode) if mode else None,
            ))
    return sessions


__all__ = [
    "SyntheticCorpusError",
    "SyntheticSpec",
    "leakage_prone_spec",
    "calibrated_mode_spec",
    "generate_synthetic_corpus",
]
