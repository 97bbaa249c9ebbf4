import pytest

from simac.config import RunConfig
from simac.model import radar_config
from simac.scene import SceneSpec, build_dataset, load_arrays, read_manifest


@pytest.fixture(scope="session")
def small_cfg():
    return RunConfig({"data.n_samples": 64, "data.heldout_samples": 16, "train.epochs": 1})


@pytest.fixture(scope="session")
def small_data(tmp_path_factory, small_cfg):
    root = tmp_path_factory.mktemp("small")
    radar = radar_config(small_cfg)
    build_dataset(SceneSpec(), 64, radar, root / "train", 0)
    build_dataset(SceneSpec(), 16, radar, root / "heldout", 1001)
    return {
        "train": load_arrays(read_manifest(root / "train")),
        "heldout": load_arrays(read_manifest(root / "heldout")),
    }


_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
