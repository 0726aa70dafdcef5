import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from intentrisk.core import make_instance, toy_instance  # noqa: E402

# frozen fixture: 6 docs, 3 intents, grades 0..3
FIXED_PROBS = [0.12, 0.29, 0.59]
FIXED_REL = [[2, 0, 1], [0, 1, 3], [2, 0, 2], [0, 3, 3], [3, 2, 3], [1, 0, 2]]


@pytest.fixture
def toy():
    return toy_instance()


@pytest.fixture
def fixed():
    return make_instance("fx", FIXED_PROBS, FIXED_REL, rel_max=3)


def random_instance(rng, n_max=10, m_max=6, rel_max=4, n_min=1):
    n = int(rng.integers(n_min, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    probs = rng.dirichlet(np.ones(m))
    rel = rng.integers(0, rel_max + 1, size=(n, m))
    return make_instance("r", list(probs), rel, rel_max=rel_max)


@st.composite
def instances(draw, n_max=8, m_max=5, rel_max=3):
    n = draw(st.integers(1, n_max))
    m = draw(st.integers(1, m_max))
    w = draw(st.lists(st.floats(0.01, 1.0), min_size=m, max_size=m))
    rel = draw(st.lists(st.lists(st.integers(0, rel_max), min_size=m, max_size=m), min_size=n, max_size=n))
    probs = np.array(w) / sum(w)
    return make_instance("h", list(probs), rel, rel_max=rel_max)


@st.composite
def instance_and_ranking(draw, n_max=8, m_max=5, k_max=5):
    inst = draw(instances(n_max, m_max))
    k = draw(st.integers(1, k_max))
    perm = draw(st.permutations(list(inst.docs)))
    length = draw(st.integers(0, min(k, inst.n_docs)))
    return inst, tuple(perm[:length]), k
