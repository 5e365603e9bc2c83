import numpy as np
import pytest

from weatherremover import tensor as T
from weatherremover.config import ModelConfig
from weatherremover.data import DegradationSpec, make_synthetic_dataset
from weatherremover.model import init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny()


@pytest.fixture
def mini_config():
    """One block per stage: fastest model that still exercises every stage."""
    return ModelConfig.tiny(enc_blocks=(1, 1, 1), bottleneck_blocks=1, dec_blocks=(1, 1, 1), refine_blocks=1)


@pytest.fixture
def tiny_model(tiny_config):
    return init_params(tiny_config, seed=7, precision="f64", zero_head=False)


@pytest.fixture(params=["python", "cython"])
def backend(request):
    """Run a test under each kernel backend, restoring the original afterwards."""
    before = T.backend()
    try:
        T.use_backend(request.param)
    except RuntimeError:
        pytest.skip("compiled kernels not built")
    yield request.param
    T.use_backend(before)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """Training set (clean only, rain synthesised on the fly) and a held-out set with twins."""
    root = tmp_path_factory.mktemp("toy")
    train = make_synthetic_dataset(root / "train", 16, 64, seed=1, with_degraded=False)
    held = make_synthetic_dataset(root / "held", 8, 32, seed=2, spec=DegradationSpec(intensity=0.5))
    return train, held


# ------------------------------------------------------- acceptance lines

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; they are repeated in the terminal summary."""
    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
