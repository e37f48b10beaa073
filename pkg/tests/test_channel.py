import json
import math

import numpy as np
import pytest

from swiptsched import (
    ConfigError,
    SystemConfig,
    dbm_to_watts,
    draw_block,
    draw_slot,
    load_config,
    mean_channel_gain,
    place_users,
)
from swiptsched.channel import config_to_dict
from swiptsched import seeds

from conftest import make_profiles

# Reference gain at the 2 m reference distance, 915 MHz, 10 + 2 dBi,
# computed independently in dB domain:
#   12 dB + 20*log10(lambda / (4 pi d0)),  lambda = c / 915e6
OMEGA_AT_REF = 0.002693515619621581


def test_dbm_to_watts():
    assert dbm_to_watts(40.0) == pytest.approx(10.0, rel=1e-12)
    assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-12)
    assert dbm_to_watts(-62.0) == pytest.approx(6.309573444801942e-10, rel=1e-12)


class TestMeanChannelGain:
    def test_reference_distance_value(self, table_config):
        assert mean_channel_gain(2.0, table_config) == pytest.approx(OMEGA_AT_REF, rel=1e-9)

    def test_doubling_distance(self, table_config):
        ratio = mean_channel_gain(4.0, table_config) / mean_channel_gain(2.0, table_config)
        assert ratio == pytest.approx(2.0 ** -3.6, rel=1e-12)

    def test_zero_exponent_flat(self):
        config = SystemConfig(n_users=1, path_loss_exponent=0.0)
        assert mean_channel_gain(2.0, config) == mean_channel_gain(77.0, config)

    def test_below_reference_rejected(self, table_config):
        with pytest.raises(ValueError):
            mean_channel_gain(1.0, table_config)


class TestPlacement:
    def test_degenerate_interval(self):
        config = SystemConfig(n_users=1, ref_distance_m=2.0, max_distance_m=2.0)
        profiles = place_users(config, np.random.default_rng(0))
        assert profiles[0].distance_m == 2.0

    def test_deterministic_by_seed(self, table_config):
        a = make_profiles(table_config, seed=123)
        b = make_profiles(table_config, seed=123)
        assert [p.distance_m for p in a] == [p.distance_m for p in b]

    def test_uniform_mean(self):
        config = SystemConfig(n_users=10_000, seed=3)
        profiles = make_profiles(config)
        mean = np.mean([p.distance_m for p in profiles])
        assert mean == pytest.approx(51.0, rel=0.01)

    def test_prefix_stability_in_n_users(self):
        # growing n_users extends the placement without moving earlier users
        small = make_profiles(SystemConfig(n_users=5, seed=9))
        large = make_profiles(SystemConfig(n_users=8, seed=9))
        assert [p.distance_m for p in small] == [p.distance_m for p in large[:5]]

    def test_mean_gain_matches_distance(self, table_config, table_profiles):
        for p in table_profiles:
            assert p.mean_gain == mean_channel_gain(p.distance_m, table_config)


class TestDrawing:
    def test_capacity_and_harvest_definitions(self, table_config, table_profiles):
        block = draw_block(table_profiles, table_config, np.random.default_rng(5), 500)
        sigma2 = np.array([p.noise_power for p in table_profiles])
        xi = np.array([p.efficiency for p in table_profiles])
        p = table_config.tx_power
        assert np.array_equal(block.capacities, np.log2(1 + p * block.gains / sigma2))
        assert np.array_equal(block.harvests, xi * p * block.gains)
        # spot values of the defining formulas themselves
        assert 0.5 * 10.0 * 1e-6 == pytest.approx(5e-6)
        assert math.log2(1 + 1.0) == 1.0

    def test_unit_snr_capacity(self):
        # a gain of sigma^2 / P gives exactly 1 bit/channel use
        h = 1e-9 / 10.0
        assert np.log2(1 + 10.0 * h / 1e-9) == 1.0

    def test_monotone_in_gain(self, table_config, table_profiles):
        block = draw_block(table_profiles, table_config, np.random.default_rng(8), 2000)
        order = np.argsort(block.gains, axis=1)
        caps = np.take_along_axis(block.capacities, order, axis=1)
        harv = np.take_along_axis(block.harvests, order, axis=1)
        assert np.all(np.diff(caps, axis=1) > 0)
        assert np.all(np.diff(harv, axis=1) > 0)

    def test_block_matches_repeated_slots(self, table_config, table_profiles):
        block = draw_block(table_profiles, table_config, np.random.default_rng(42), 64)
        rng = np.random.default_rng(42)
        for i in range(64):
            slot = draw_slot(table_profiles, table_config, rng, slot_index=i)
            assert np.array_equal(slot.gains, block.gains[i])
            assert slot.slot_index == i

    def test_deterministic_by_seed(self, table_config, table_profiles):
        a = draw_block(table_profiles, table_config, seeds.substream(4, seeds.RUN), 100)
        b = draw_block(table_profiles, table_config, seeds.substream(4, seeds.RUN), 100)
        assert np.array_equal(a.gains, b.gains)

    def test_empirical_mean_gain(self, table_config, table_profiles):
        block = draw_block(table_profiles, table_config, np.random.default_rng(6), 1_000_000)
        omega = np.array([p.mean_gain for p in table_profiles])
        assert np.all(np.abs(block.gains.mean(axis=0) / omega - 1.0) < 0.005)

    def test_no_exact_gain_ties(self, table_config, table_profiles):
        block = draw_block(table_profiles, table_config, np.random.default_rng(7), 1_000_000)
        sorted_gains = np.sort(block.gains, axis=1)
        assert np.all(np.diff(sorted_gains, axis=1) > 0)

    def test_empty_profiles_rejected(self, table_config):
        with pytest.raises(ValueError):
            draw_block([], table_config, np.random.default_rng(0), 10)


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ConfigError):
            SystemConfig(n_users=0)
        with pytest.raises(ConfigError):
            SystemConfig(n_users=2, tx_power=-1.0)
        with pytest.raises(ConfigError):
            SystemConfig(n_users=2, rf_dc_efficiency_per_user=1.5)
        with pytest.raises(ConfigError):
            SystemConfig(n_users=2, ref_distance_m=10.0, max_distance_m=5.0)
        with pytest.raises(ConfigError):
            SystemConfig(n_users=2, noise_power_per_user=[1e-10, 1e-10, 1e-10])

    def test_per_user_arrays(self):
        config = SystemConfig(
            n_users=2, noise_power_per_user=[1e-10, 2e-10], rf_dc_efficiency_per_user=0.3
        )
        assert config.noise_powers().tolist() == [1e-10, 2e-10]
        assert config.efficiencies().tolist() == [0.3, 0.3]


class TestConfigFile:
    def test_keyvalue_roundtrip(self, tmp_path):
        path = tmp_path / "system.cfg"
        path.write_text(
            "# comment\n"
            "n_users = 3\n"
            "tx_power_dbm = 40\n"
            "noise_power_per_user_dbm = -62\n"
            "rf_dc_efficiency_per_user = 0.5\n"
            "q_req = 1e-6\n"
            "seed = 9\n"
        )
        config = load_config(path)
        assert config.n_users == 3
        assert config.tx_power == pytest.approx(10.0)
        assert config.noise_powers()[0] == pytest.approx(6.309573444801942e-10)
        assert config.q_req == 1e-6
        assert config.seed == 9

    def test_json_config(self, tmp_path):
        path = tmp_path / "system.json"
        payload = {"n_users": 2, "tx_power": 5.0, "noise_power_per_user": [1e-10, 2e-10]}
        path.write_text(json.dumps(payload))
        config = load_config(path)
        assert config.tx_power == 5.0
        assert config.noise_powers().tolist() == [1e-10, 2e-10]

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("n_users = 2\nshadowing_db = 8\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_conflicting_dbm_and_watts(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("n_users = 2\ntx_power = 10\ntx_power_dbm = 40\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_n_users(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("tx_power = 10\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_config_to_dict(self, table_config):
        flat = config_to_dict(table_config)
        assert flat["n_users"] == 5
        assert flat["carrier_hz"] == 915e6
