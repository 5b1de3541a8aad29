import numpy as np
import pytest

import bubblelab as bl

# Module-test scale: small ensembles, shared across tests via session fixtures.
N_SMALL = 30_000
DT_SMALL = 1e-3


@pytest.fixture(scope="session")
def bes3():
    return bl.inverse_bes3()


@pytest.fixture(scope="session")
def bes3_p(bes3):
    return bl.simulate_p(
        bes3, 1.0, DT_SMALL, N_SMALL, 421,
        obs_times=(0.25, 0.5, 0.75, 1.0),
        levels_below=(0.5, 1.0), levels_above=(2.0, 1.0),
    )


@pytest.fixture(scope="session")
def bes3_q(bes3):
    return bl.simulate_q(
        bes3, 1.0, DT_SMALL, N_SMALL, 422,
        obs_times=(0.25, 0.5, 0.75, 1.0),
        levels_below=(0.5, 1.0), levels_above=(2.0, 1.0),
    )


@pytest.fixture(scope="session")
def bes3_q_long(bes3):
    """Horizon-4 dual ensemble with last-passage clocks at the exchange levels."""
    return bl.simulate_q(
        bes3, 4.0, 2e-3, N_SMALL, 423,
        obs_times=(1.0, 4.0), rho_levels=(2.0, 1.0, 0.5),
    )


def se_of(values):
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / np.sqrt(values.size))
