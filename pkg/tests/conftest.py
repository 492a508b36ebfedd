from fractions import Fraction

import numpy as np
import pytest

from urnlab.kernel import build_generator, build_kernel, parse_kernel_text
from urnlab.settings import get_settings

TWO_STATE_TEXT = """\
kernel explicit 2
0 0 0.9
0 1 0.1
1 0 0.2
1 1 0.8
"""

FLIP_TEXT = """\
kernel explicit 2
0 1 1
1 0 1
"""


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_state():
    return parse_kernel_text(TWO_STATE_TEXT)


@pytest.fixture
def flip():
    return parse_kernel_text(FLIP_TEXT)


@pytest.fixture
def identity2():
    return build_kernel([[Fraction(1), Fraction(0)], [Fraction(0), Fraction(1)]])


@pytest.fixture
def mixing():
    half = Fraction(1, 2)
    return build_kernel([[half, half], [half, half]])


@pytest.fixture
def reset_chain():
    return build_generator("reset-chain", epsilon=Fraction(3, 10), nu_geometric_p=Fraction(1, 2))


@pytest.fixture
def star():
    return build_generator("star-walk", p=[Fraction(1, 2), Fraction(3, 10), Fraction(1, 5)])


@pytest.fixture
def kernel_file(tmp_path):
    path = tmp_path / "two_state.kernel"
    path.write_text(TWO_STATE_TEXT)
    return path


@pytest.fixture
def flip_file(tmp_path):
    path = tmp_path / "flip.kernel"
    path.write_text(FLIP_TEXT)
    return path
