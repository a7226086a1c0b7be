import hypothesis
import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maskinject.masks import BinaryMask, MaskSet

hypothesis.settings.register_profile(
    "default", max_examples=40, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("default")


@st.composite
def mask_arrays(draw, max_side: int = 12, min_side: int = 1):
    h = draw(st.integers(min_side, max_side))
    w = draw(st.integers(min_side, max_side))
    return draw(hnp.arrays(dtype=bool, shape=(h, w)))


@st.composite
def nonempty_mask_arrays(draw, max_side: int = 12):
    bits = draw(mask_arrays(max_side=max_side))
    if not bits.any():
        y = draw(st.integers(0, bits.shape[0] - 1))
        x = draw(st.integers(0, bits.shape[1] - 1))
        bits = bits.copy()
        bits[y, x] = True
    return bits


@st.composite
def mask_set_arrays(draw, max_side: int = 10, max_masks: int = 5):
    h = draw(st.integers(2, max_side))
    w = draw(st.integers(2, max_side))
    n = draw(st.integers(0, max_masks))
    return [draw(hnp.arrays(dtype=bool, shape=(h, w))) for _ in range(n)], h, w


def make_set(arrays, w, h, disjoint=False):
    return MaskSet(w, h, tuple(BinaryMask(a) for a in arrays), disjoint=disjoint)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
