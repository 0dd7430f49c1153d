import numpy as np
import pytest

from kwstm.audio import write_wav

TONES = {"yes": 300.0, "no": 800.0, "stop": 1600.0, "seven": 3200.0}


def make_corpus(root, keywords=("yes", "no", "stop", "seven"), per_class=30, seed=0, sample_rate=16000):
    """Synthetic corpus: each keyword is a noisy tone at its own pitch, with ragged clip lengths."""
    rng = np.random.default_rng(seed)
    for kw in keywords:
        (root / kw).mkdir(parents=True, exist_ok=True)
        base = TONES.get(kw, 500.0 + 97.0 * len(kw))
        for i in range(per_class):
            n = int(rng.integers(14000, 17500))
            t = np.arange(n) / sample_rate
            freq = base * rng.uniform(0.95, 1.05)
            x = 0.4 * np.sin(2 * np.pi * freq * t) + 0.05 * rng.standard_normal(n)
            write_wav(root / kw / f"{kw}_{i:03d}.wav", np.clip(x, -1, 1), sample_rate)
    return root


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"))


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} -- {detail}")
