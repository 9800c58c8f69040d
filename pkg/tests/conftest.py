import numpy as np
import pytest

from texavatar.dataset import Dataset
from texavatar.gradcheck import check_gradients
from texavatar.synthetic import default_figure, generate_dataset


@pytest.fixture(scope="session")
def figure():
    return default_figure(texture_side=32, seed=0)


@pytest.fixture(scope="session")
def dataset_frames(figure):
    """Small synthetic dataset: 3 cameras x 5 poses, middle camera and last pose held out."""
    return generate_dataset(figure, n_cameras=3, n_poses=5, motion_seed=3)


@pytest.fixture(scope="session")
def small_dataset(figure, dataset_frames):
    frames, split = dataset_frames
    return Dataset.from_frames(frames, figure.skeleton, split, figure.n_parts, figure.texture_side, 8.0)


def assert_gradients(name, loss_fn, tensors, **kw):
    res = check_gradients(name, loss_fn, tensors, **kw)
    assert res.probes
    assert res.ok, res.summary() + "\n" + "\n".join(
        f"  {p.tensor}{p.index}: analytic {p.analytic:.6g} numeric {p.numeric:.6g}" for p in res.probes)
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(11)


# (criterion number, title, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    row = (number, title, bool(passed), detail)
    ACCEPTANCE_RESULTS.append(row)
    print(f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
