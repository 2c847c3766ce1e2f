import numpy as np
import pytest

from contactgrasp.geom import box, cylinder, icosphere, write_off
from contactgrasp.hand import load_hand
from contactgrasp.synth import synthesize_object


@pytest.fixture(scope="session")
def hand():
    return load_hand()


@pytest.fixture(scope="session")
def sphere():
    return icosphere(0.04, 3)


@pytest.fixture(scope="session")
def cube():
    return box((0.06, 0.06, 0.06))


@pytest.fixture(scope="session")
def can():
    return cylinder(0.03, 0.1, 32)


@pytest.fixture(scope="session")
def sphere_grasps(hand, sphere):
    return synthesize_object(sphere, hand, target_count=6, object_id="sphere")


@pytest.fixture(scope="session")
def cube_grasps(hand, cube):
    return synthesize_object(cube, hand, target_count=6, object_id="cube")


@pytest.fixture(scope="session")
def object_dir(tmp_path_factory, sphere, cube, can):
    d = tmp_path_factory.mktemp("objects")
    for name, m in (("sphere", sphere), ("cube", cube), ("can", can)):
        write_off(m, d / f"{name}.off")
    (d / "objects.txt").write_text("sphere sphere.off\ncube cube.off\ncan can.off\n")
    return d


def random_unit(rng, n=None):
    v = rng.standard_normal((n or 1, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v if n else v[0]


def random_rotation(rng):
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
