"""
PR 08 — Synthetic Corpus Tests

Testing Endpoints:
1. generation is deterministic in (spec, seed)
2. sessions are well-formed and labels follow per-task prevalence
3. strength 0 hides attacks inside benign templates
4. spec validation rejects inconsistent settings
"""

from collections import Counter, defaultdict

import pytest

from sessionguard.embedding_provider import truncate_text
from sessionguard.session_model import THREAT_MODES, parse_session_line, serialize_session
from sessionguard.synthetic_corpus import (
    SyntheticCorpusError,
    SyntheticSpec,
    calibrated_mode_spec,
    generate_synthetic_corpus,
    leakage_prone_spec,
)


@pytest.mark.pr08
def test_same_seed_same_corpus(small_spec):
    """
    Testing Endpoint 1: identical spec and seed give an identical corpus
    """
    assert generate_synthetic_corpus(small_spec, seed=7) == generate_synthetic_corpus(small_spec, seed=7)
    assert generate_synthetic_corpus(small_spec, seed=7) != generate_synthetic_corpus(small_spec, seed=8)


@pytest.mark.pr08
def test_corpus_shape(small_corpus, small_spec):
    """
    Testing Endpoint 2: ids, tasks, modes and call counts
    """
    assert len(small_corpus) == small_spec.n_tasks * small_spec.sessions_per_task
    assert len({s.session_id for s in small_corpus}) == len(small_corpus)
    assert len({s.task_id for s in small_corpus}) == small_spec.n_tasks
    for session in small_corpus:
        assert small_spec.min_calls <= len(session.calls) <= small_spec.max_calls
        assert all(len(c.response_text) <= 1000 for c in session.calls)
        if session.is_attack:
            assert session.attack_category in THREAT_MODES
        else:
            assert session.attack_mode is None
        assert parse_session_line(serialize_session(session)) == session


@pytest.mark.pr08
def test_balanced_by_default(small_corpus):
    per_task = Counter(s.task_id for s in small_corpus if s.is_attack)
    assert set(per_task.values()) == {4}


@pytest.mark.pr08
def test_leakage_prone_prevalence():
    spec = leakage_prone_spec(n_tasks=10, sessions_per_task=10, word_pool_size=80)
    corpus = generate_synthetic_corpus(spec, seed=42)
    per_task = Counter(s.task_id for s in corpus if s.is_attack)
    counts = sorted(per_task.get(f"task-{t:03d}", 0) for t in range(10))
    assert counts == [1] * 5 + [9] * 5


@pytest.mark.pr08
def test_tools_are_task_specific(small_corpus):
    tools = defaultdict(set)
    for session in small_corpus:
        tools[session.task_id].update(c.tool_name for c in session.calls)
    owners = Counter(name for names in tools.values() for name in names)
    assert set(owners.values()) == {1}


@pytest.mark.pr08
def test_zero_strength_hides_attacks():
    """
    Testing Endpoint 3: without substitution every embedded argument text is a task template
    """
    spec = SyntheticSpec(
        n_tasks=6, sessions_per_task=8, templates_per_task=2, word_pool_size=80,
        mode_strengths={m: 0.0 for m in THREAT_MODES},
    )
    seen = defaultdict(set)
    for session in generate_synthetic_corpus(spec, seed=3):
        seen[session.task_id].update(truncate_text(c.args_text) for c in session.calls)
    assert all(len(texts) <= spec.templates_per_task for texts in seen.values())

    strong = SyntheticSpec(n_tasks=6, sessions_per_task=8, templates_per_task=2, word_pool_size=80)
    seen_strong = defaultdict(set)
    for session in generate_synthetic_corpus(strong, seed=3):
        seen_strong[session.task_id].update(truncate_text(c.args_text) for c in session.calls)
    assert any(len(texts) > strong.templates_per_task for texts in seen_strong.values())


@pytest.mark.pr08
def test_calibrated_spec_orders_strengths():
    spec = calibrated_mode_spec()
    strengths = spec.mode_strengths
    assert strengths["both"] > strengths["tool_output"] > strengths["tool_input"]
    spec.validate()


@pytest.mark.pr08
@pytest.mark.parametrize(
    "overrides",
    [
        {"attack_fraction": 1.5},
        {"task_attack_skew": 0.9, "attack_fraction": 0.3},
        {"min_calls": 4, "max_calls": 2},
        {"mode_weights": {"jailbreak": 1.0}},
        {"mode_strengths": {"both": 2.0}},
        {"word_pool_size": 3},
    ],
)
def test_spec_validation(overrides):
    """
    Testing Endpoint 4: inconsistent specs are rejected before generation
    """
    with pytest.raises(SyntheticCorpusError):
        generate_synthetic_corpus(SyntheticSpec(**overrides))


@pytest.mark.pr08
def test_spec_dict_roundtrip():
    spec = leakage_prone_spec(n_tasks=4)
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(SyntheticCorpusError):
        SyntheticSpec.from_dict({"n_sessions": 10})
