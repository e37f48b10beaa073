import pytest

from swiptsched import SystemConfig, UserProfile, mean_channel_gain, place_users
from swiptsched import seeds


def make_profiles(config: SystemConfig, seed: int | None = None):
    """Place users from the placement substream of the given seed."""
    root = config.seed if seed is None else seed
    return place_users(config, seeds.substream(root, seeds.PLACEMENT))


def profiles_at(distances, config: SystemConfig):
    """Profiles pinned to explicit distances (for symmetric/controlled cases)."""
    noise = config.noise_powers()
    xi = config.efficiencies()
    return [
        UserProfile(
            distance_m=float(d),
            mean_gain=mean_channel_gain(float(d), config),
            efficiency=float(xi[n]),
            noise_power=float(noise[n]),
        )
        for n, d in enumerate(distances)
    ]


@pytest.fixture(scope="session")
def table_config():
    """Default physical parameters, 5 users."""
    return SystemConfig(n_users=5, seed=11)


@pytest.fixture(scope="session")
def table_profiles(table_config):
    return make_profiles(table_config)
