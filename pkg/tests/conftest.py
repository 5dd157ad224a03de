import numpy as np
import pytest
from hypothesis import settings, strategies as st

from reluid.network import Architecture, NetworkParams

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_params(rng, widths) -> NetworkParams:
    arch = Architecture(tuple(widths))
    K = arch.depth
    layers = {k: (rng.standard_normal((arch.width(k), arch.width(k + 1))),
                  rng.standard_normal(arch.width(k))) for k in range(K)}
    return NetworkParams.from_layers(layers)


@st.composite
def architectures(draw, min_depth=2, max_depth=4, max_width=6):
    K = draw(st.integers(min_depth, max_depth))
    return tuple(draw(st.integers(1, max_width)) for _ in range(K + 1))


@st.composite
def params_and_seed(draw, **kw):
    widths = draw(architectures(**kw))
    seed = draw(st.integers(0, 2**31 - 1))
    return random_params(np.random.default_rng(seed), widths), seed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
