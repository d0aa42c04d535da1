import numpy as np
import pytest

from deepaug.nn import init_params
from deepaug.trainer import TrainConfig

DEFAULT_WIDTHS = [64, 128, 128, 128, 128, 128, 32]


@pytest.fixture
def encoder():
    return init_params([6, 8, 8, 8, 8, 8, 4], seed=0)


@pytest.fixture
def default_encoder():
    return init_params(DEFAULT_WIDTHS, seed=0)


@pytest.fixture
def tiny_config():
    """A few-second end-to-end configuration."""
    return TrainConfig(syn_superclasses=2, syn_subclasses=2, syn_dim=8, syn_per_subclass=30,
                       hidden_widths=[16, 16, 16], proj_width=8, batch_size=32, epochs=2, eval_every=1,
                       eval_size=64, probe_epochs=20, target_layer=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, passed, detail)`` prints and records one result line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(n, passed, detail, gated=True):
        status = "PASS" if passed else ("FAIL" if gated else "FAIL (reported, not gated)")
        line = f"criterion {n:>2}: {status}  {detail}"
        print(line)
        lines.append((n, line))
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
