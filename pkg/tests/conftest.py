"""
Pytest configuration, shared fixtures and narrative reporting hooks

Run with --narrative to get a story-like summary of what each PR phase
verified. Fixtures build small sessions and a small synthetic corpus so
the suite stays desk-scale.
"""

import pytest

from sessionguard.embedding_provider import DeterministicProvider
from sessionguard.neural_models import TrainConfig
from sessionguard.session_model import AttackMode, Label, Session, ToolCall
from sessionguard.synthetic_corpus import SyntheticSpec, generate_synthetic_corpus


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

def build_session(session_id, calls, label="benign", task_id=None, mode=None, source="test"):
    """calls: list of (tool, args_text, response_text)."""
    return Session(
        session_id=session_id,
        source=source,
        label=Label(label),
        calls=tuple(ToolCall(i, tool, args, resp) for i, (tool, args, resp) in enumerate(calls)),
        task_id=task_id,
        attack_mode=AttackMode.parse(mode) if mode else None,
    )


@pytest.fixture
def make_session():
    return build_session


@pytest.fixture
def small_spec():
    return SyntheticSpec(
        n_tasks=10,
        sessions_per_task=8,
        max_calls=4,
        templates_per_task=2,
        attack_pool_size=3,
        word_pool_size=80,
    )


@pytest.fixture
def small_corpus(small_spec):
    return generate_synthetic_corpus(small_spec, seed=42)


@pytest.fixture
def provider():
    return DeterministicProvider(dim=16)


@pytest.fixture
def fast_train_config():
    return TrainConfig(max_epochs=20, eval_every=5, patience=2, hidden_dim=16, batch_size=32)


# ---------------------------------------------------------------------------
# Narrative reporting
# ---------------------------------------------------------------------------

PHASES = {
    "test_repo_structure": ("📁", "PR 00 - REPOSITORY STRUCTURE",
                            "Checked that the package, manifest and phase index are in place."),
    "test_session_model": ("🧾", "PR 01 - SESSION MODEL & ADAPTERS",
                           "Normalized sessions were parsed, validated and adapted from raw releases."),
    "test_graph_builder": ("🕸️", "PR 02 - SESSION GRAPHS",
                           "Sessions were encoded as graphs with sequential and data-flow edges."),
    "test_embedding_provider": ("🧠", "PR 03 - EMBEDDING PROVIDER",
                                "Embedding backends, the on-disk cache and the HTTP client were exercised."),
    "test_feature_extractor": ("🔢", "PR 04 - FEATURE EXTRACTION",
                               "Node features in all three modes and the pooled readout were computed."),
    "test_classical_classifiers": ("🌲", "PR 05 - CLASSICAL BASELINES",
                                   "Logistic regression, linear SVM and random forest were trained and scored."),
    "test_model_store": ("💾", "PR 05 - MODEL ARTIFACTS",
                         "Trained models were saved, reloaded and dimension-checked."),
    "test_neural_models": ("⚡", "PR 06 - NEURAL MODELS",
                           "MLP and GraphSAGE classifiers were trained, gradient-checked and scored."),
    "test_contrastive": ("🔁", "PR 07 - CONTRASTIVE PRE-TRAINING",
                         "Graph augmentation, NT-Xent and pre-train/fine-tune were exercised."),
    "test_eval_protocol": ("📐", "PR 08 - EVALUATION PROTOCOL",
                           "Splits, folds and detection metrics were checked against oracles."),
    "test_synthetic_corpus": ("🧪", "PR 08 - SYNTHETIC CORPUS",
                              "The deterministic synthetic corpus was generated and inspected."),
    "test_experiments": ("🔬", "PR 08 - EXPERIMENTS",
                         "Multi-seed, leakage-gap, sweep and window experiments ran end to end."),
    "test_run_config": ("⚙️", "PR 09 - RUN CONFIGURATION",
                        "Run configs were validated, overridden, saved and digested."),
    "test_cli": ("🖥️", "PR 09 - COMMAND LINE",
                 "CLI commands produced their artifacts and honored the exit-code contract."),
    "test_statistics": ("📊", "PR 10 - STATISTICS",
                        "Per-seed metrics were aggregated into mean ± sd and tables."),
    "test_run_manifest": ("📦", "PR 10 - RUN MANIFEST",
                          "Manifests listed artifacts, fingerprinted inputs and reported status."),
    "test_run_log": ("📝", "PR 10 - RUN LOGGING",
                     "Run-scoped loggers and the events log behaved as configured."),
    "test_pipeline": ("🔗", "PR 10 - PIPELINE",
                      "Split, featurize, fit and evaluate were chained on one corpus."),
    "test_acceptance": ("🏁", "ACCEPTANCE",
                        "Desk-scale findings and determinism were verified on synthetic data."),
}


class NarrativeReporter:
    """Generates narrative summaries of test executions"""

    def __init__(self):
        self.test_results = []

    def pytest_runtest_logreport(self, report):
        """Capture test results"""
        if report.when == "call":
            self.test_results.append({
                'name': report.nodeid,
                'outcome': report.outcome,
                'duration': report.duration,
                'description': report.nodeid.split('::')[-1].replace('_', ' ').title(),
            })

    def generate_narrative(self):
        """Generate a story-like narrative of the test run"""
        if not self.test_results:
            return ""

        narrative = ["\n" + "=" * 70, "TEST EXECUTION NARRATIVE", "=" * 70 + "\n"]

        by_file = {}
        for result in self.test_results:
            file_path = result['name'].split('::')[0]
            by_file.setdefault(file_path, []).append(result)

        for file_path, tests in by_file.items():
            stem = file_path.split('/')[-1].replace('.py', '')
            if stem == 'test_acceptance':
                narrative.append(self._narrate_acceptance(tests))
            else:
                narrative.append(self._narrate_phase(stem, tests))

        total = len(self.test_results)
        passed = sum(1 for r in self.test_results if r['outcome'] == 'passed')
        failed = sum(1 for r in self.test_results if r['outcome'] == 'failed')
        skipped = sum(1 for r in self.test_results if r['outcome'] == 'skipped')
        total_time = sum(r['duration'] for r in self.test_results)

        narrative.append("\n" + "-" * 70)
        narrative.append("SUMMARY")
        narrative.append("-" * 70)
        if failed == 0 and skipped == 0:
            narrative.append(f"\n✨ SUCCESS! All {total} tests passed in {total_time:.2f}s.")
        elif failed > 0:
            narrative.append(f"\n⚠️  ISSUES DETECTED: {failed} test(s) failed out of {total}.")
            narrative.append(f"   {passed} tests passed, {skipped} skipped.")
        else:
            narrative.append(f"\n✓ PARTIAL SUCCESS: {passed}/{total} tests passed in {total_time:.2f}s.")
            narrative.append(f"   {skipped} test(s) were skipped (remote embedding endpoint not configured?).")
        narrative.append("\n" + "=" * 70 + "\n")
        return "\n".join(narrative)

    def _narrate_phase(self, stem, tests):
        emoji, title, intro = PHASES.get(stem, ("🧪", stem.upper(), ""))
        narrative = [f"\n{emoji} {title}", "-" * 70]
        if intro:
            narrative.append(f"\n{intro}\n")
        for test in tests:
            narrative.append(
                f"{self._status_emoji(test['outcome'])} {test['description']} ({test['duration']:.2f}s)"
            )
        return "\n".join(narrative)

    def _narrate_acceptance(self, tests):
        """Acceptance findings get a verdict line each"""
        narrative = ["\n🏁 ACCEPTANCE - DESK-SCALE FINDINGS", "-" * 70]
        for test in tests:
            status = self._status_emoji(test['outcome'])
            narrative.append(f"{status} {test['description']}")
            if test['outcome'] == 'passed':
                narrative.append("   → finding reproduced on the synthetic corpus.")
            elif test['outcome'] == 'failed':
                narrative.append("   → finding NOT reproduced; inspect the per-seed metrics.")
        return "\n".join(narrative)

    def _status_emoji(self, outcome):
        return {'passed': '✅', 'failed': '❌', 'skipped': '⏭️'}.get(outcome, '❓')


_narrative_reporter = NarrativeReporter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Hook to display narrative after test run"""
    if config.getoption('--narrative'):
        terminalreporter.write(_narrative_reporter.generate_narrative())


def pytest_addoption(parser):
    """Add --narrative command line option"""
    parser.addoption(
        "--narrative",
        action="store_true",
        default=False,
        help="Generate a narrative summary of test execution",
    )


def pytest_configure(config):
    """Configure pytest with narrative reporter"""
    if config.getoption('--narrative'):
        config.pluginmanager.register(_narrative_reporter)
