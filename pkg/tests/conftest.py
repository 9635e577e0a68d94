import numpy as np
import pytest

import ligandsense as ls


@pytest.fixture
def default_rates():
    """The reference channel: five types, geometric spacing by 5."""
    return ls.geometric_unbinding_rates(5, 5.0, 1.0)


@pytest.fixture
def default_mixture(default_rates):
    return ls.LigandMixture(
        binding_rate=1.0,
        unbinding_rates=default_rates,
        ratios=np.full(5, 0.2),
        total_concentration=1.0,
    )


@pytest.fixture
def three_type_mixture():
    return ls.LigandMixture(
        binding_rate=1.0,
        unbinding_rates=np.array([25.0, 5.0, 1.0]),
        ratios=np.array([1 / 3, 1 / 3, 1 / 3]),
        total_concentration=1.0,
    )
