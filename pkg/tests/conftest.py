import numpy as np
import pytest


class ShimRng:
    """Duck-typed generator that forces chosen draws and delegates the rest."""

    def __init__(self, seed=0, forced=None):
        self._rng = np.random.default_rng(seed)
        self.forced = forced or {}

    def __getattr__(self, name):
        if name in self.forced:
            value = self.forced[name]
            return lambda *a, **k: value
        return getattr(self._rng, name)


@pytest.fixture
def shim_rng():
    return ShimRng
