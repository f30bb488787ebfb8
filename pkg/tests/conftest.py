from pathlib import Path

import pytest

from unitrans.config import load_run_config
from unitrans.pipeline import PipelineInputs
from unitrans.synth import SynthConfig, generate_synthetic_bilingual

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK = ROOT / "benchmarks" / "synthetic.cfg"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = getattr(item, "criterion_detail", "")
        _criteria[n] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok, detail = _criteria[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the criterion summary line."""
    def record(text):
        request.node.criterion_detail = text
        print(text)
    return record


@pytest.fixture(scope="session")
def benchmark_config():
    return load_run_config(BENCHMARK)


@pytest.fixture(scope="session")
def benchmark_inputs(benchmark_config):
    synth = SynthConfig.from_dict(benchmark_config.synth)
    data = generate_synthetic_bilingual(synth, benchmark_config.synth_seed)
    return PipelineInputs(data.source, data.source_table, data.target_table,
                          data.unlabeled, data.target, data.label_set)
