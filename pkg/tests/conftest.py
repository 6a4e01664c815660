import numpy as np
import pytest

from latentanon.backends import SyntheticWorld

SMALL = dict(
    n_channels=24,
    image_size=32,
    identity_blocks=((5, 0, 8), (6, 0, 8), (7, 0, 8)),
    attribute_channel_start=12,
    n_attributes=4,
)


@pytest.fixture(scope="session")
def world():
    return SyntheticWorld()


@pytest.fixture(scope="session")
def small_world():
    return SyntheticWorld(**SMALL)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def onnx_dir(tmp_path_factory, small_world):
    pytest.importorskip("onnxruntime")
    from latentanon.backends.onnx_export import export_world

    return export_world(small_world, tmp_path_factory.mktemp("onnx_backend"))


# acceptance criteria report: name -> (status, detail)
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in CRITERIA.items():
        terminalreporter.write_line(f"{status:4s}  {name}: {detail}")
