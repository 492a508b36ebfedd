from fractions import Fraction

from hypothesis import strategies as st

from urnlab.kernel import build_kernel
from urnlab.measure import SparseMeasure
from urnlab.urn import SequenceLaw


@st.composite
def stochastic_rows(draw, max_colors=3):
    """Rows of a random exact stochastic matrix."""
    k = draw(st.integers(1, max_colors))
    rows = []
    for _ in range(k):
        counts = draw(st.lists(st.integers(0, 9), min_size=k, max_size=k).filter(any))
        total = sum(counts)
        rows.append([Fraction(c, total) for c in counts])
    return rows


@st.composite
def exact_kernels(draw, max_colors=3):
    return build_kernel(draw(stochastic_rows(max_colors)))


@st.composite
def initial_measures(draw, num_colors):
    colors = draw(st.lists(st.integers(0, num_colors - 1), min_size=1, max_size=num_colors, unique=True))
    return SparseMeasure.from_mapping({c: Fraction(draw(st.integers(1, 6)), draw(st.integers(1, 4))) for c in colors})


@st.composite
def sequence_laws(draw, horizon):
    """Random rational law over color sequences of length ``horizon + 1``."""
    paths = st.tuples(*[st.integers(0, 2)] * (horizon + 1))
    weights = draw(st.dictionaries(paths, st.integers(1, 20), min_size=1, max_size=8))
    total = sum(weights.values())
    return SequenceLaw(horizon, {path: Fraction(w, total) for path, w in sorted(weights.items())})
