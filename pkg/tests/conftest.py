import pytest

from vocoder_artifacts import dataset as D
from vocoder_artifacts import dsp


@pytest.fixture(scope="session")
def toy_build(tmp_path_factory):
    """Ten toy utterances self-vocoded through all three surrogates."""
    root = tmp_path_factory.mktemp("toy")
    D.make_toy_corpus(root / "corpus", 10, seed=0)
    m, report = D.build_selfvocoded(root / "corpus", D.surrogate_plugins(["GL-A", "GL-B", "GL-C"]),
                                    dsp.MelConfig(), root / "dataset", seed=0)
    return root, m, report


@pytest.fixture(scope="session")
def toy_experiment(tmp_path_factory):
    """Full desk-scale run for two seeds; several minutes per seed."""
    from vocoder_artifacts import experiment as E

    workdir = tmp_path_factory.mktemp("experiment")
    return workdir, {seed: E.run(workdir, seed) for seed in (0, 1)}


def pytest_terminal_summary(terminalreporter):
    from _support import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, ok in ACCEPTANCE:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
