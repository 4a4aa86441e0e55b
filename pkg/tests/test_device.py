import json
import math

import numpy as np
import pytest

from sysadapt.config import default_profile
from sysadapt.device import (CalibrationResult, DelaySample, DeviceProfile,
                             KernelWorkload, action_cost, calibrate_profile,
                             measured_delay, model_delay, restrict_profile)
from sysadapt.errors import CalibrationError, ConfigError
from sysadapt.status import SystemStatus
from sysadapt.stream import build_action_space


def make_profile(**kw):
    base = dict(name="t", base_speed=2000.0, depth_frac=(0.45, 0.75, 1.0),
                res_ref=256, kappa=100.0, overhead=0.0, noise_sigma=0.0)
    base.update(kw)
    return DeviceProfile(**base)


def status(load):
    return SystemStatus(load=load, per_proc_active=np.zeros(0, dtype=np.uint8),
                        aux_signals=(load, 0.0))


def test_action_cost_full_depth_reference_resolution():
    prof = make_profile()
    space = build_action_space([128, 192, 256], 3)
    assert action_cost(prof, space.action(2, 2)) == pytest.approx(100.0, abs=1e-12)


def test_action_cost_half_resolution_first_exit():
    prof = make_profile()
    space = build_action_space([128, 192, 256], 3)
    assert action_cost(prof, space.action(0, 0)) == pytest.approx(100 * 0.25 * 0.45, abs=1e-12)


def test_action_cost_resolution_ratios():
    prof = make_profile()
    space = build_action_space([128, 192, 256], 3)
    costs = [action_cost(prof, space.action(i, 2)) for i in range(3)]
    assert costs[0] / costs[2] == pytest.approx(0.25, abs=1e-12)
    assert costs[1] / costs[2] == pytest.approx(0.5625, abs=1e-12)


def test_model_delay_formula():
    prof = make_profile(kappa=30.0, depth_frac=(1.0,), overhead=0.005)
    space = build_action_space([256], 1)
    d = model_delay(prof, space.action(0, 0), status(0.5))
    assert d == pytest.approx(30 / (2000 * 0.5) + 0.005, abs=1e-12)


def test_model_delay_zero_load_zero_overhead():
    prof = make_profile(kappa=30.0, depth_frac=(1.0,))
    space = build_action_space([256], 1)
    assert model_delay(prof, space.action(0, 0), status(0.0)) == pytest.approx(0.015, abs=1e-12)


def test_model_delay_capacity_floor():
    prof = make_profile(kappa=30.0, depth_frac=(1.0,))
    space = build_action_space([256], 1)
    d = model_delay(prof, space.action(0, 0), status(0.99))
    assert d == pytest.approx(30 / (2000 * 0.05), abs=1e-12)


def test_model_delay_monotonicity():
    prof = make_profile()
    space = build_action_space([128, 192, 256], 3)
    loads = [0.0, 0.2, 0.5, 0.8, 0.95]
    for a in space.all_actions:
        delays = [model_delay(prof, a, status(l)) for l in loads]
        assert all(b >= x for x, b in zip(delays, delays[1:]))
    for l in loads:
        for j in range(3):
            by_res = [model_delay(prof, space.action(i, j), status(l)) for i in range(3)]
            assert by_res == sorted(by_res)
        for i in range(3):
            by_depth = [model_delay(prof, space.action(i, j), status(l)) for j in range(3)]
            assert by_depth == sorted(by_depth)


def test_model_delay_noise_deterministic_given_rng():
    prof = make_profile(noise_sigma=0.1)
    space = build_action_space([256], 1)
    a = space.action(0, 0)
    d1 = model_delay(prof, a, status(0.3), np.random.default_rng(5))
    d2 = model_delay(prof, a, status(0.3), np.random.default_rng(5))
    assert d1 == d2
    assert d1 != model_delay(prof, a, status(0.3))


def test_restrict_profile_scales_speed():
    prof = make_profile(base_speed=1000.0)
    assert restrict_profile(prof, 0.5).base_speed == 500.0


def test_restrict_profile_identity_except_name():
    prof = make_profile()
    r = restrict_profile(prof, 1.0)
    assert r.base_speed == prof.base_speed
    assert r.name != prof.name


def test_restrict_profile_compositionality():
    prof = make_profile(base_speed=1000.0)
    a = restrict_profile(restrict_profile(prof, 0.8), 0.5)
    b = restrict_profile(prof, 0.8 * 0.5)
    assert a.base_speed == pytest.approx(b.base_speed, rel=1e-15)


def test_restrict_profile_invalid_fraction():
    prof = make_profile()
    with pytest.raises(ConfigError):
        restrict_profile(prof, 0.0)
    with pytest.raises(ConfigError):
        restrict_profile(prof, 1.1)


def test_augmentation_grid():
    profiles = [default_profile(n) for n in "abc"]
    augmented = [restrict_profile(p, f) for p in profiles for f in (1.0, 0.75, 0.5)]
    assert len(augmented) == 9
    assert len({p.name for p in augmented}) == 9


def test_profile_validation():
    with pytest.raises(ConfigError):
        make_profile(base_speed=0.0)
    with pytest.raises(ConfigError):
        make_profile(depth_frac=(0.5, 0.4, 1.0))
    with pytest.raises(ConfigError):
        make_profile(depth_frac=(0.5, 0.9))  # does not end at 1.0
    with pytest.raises(ConfigError):
        make_profile(capacity_floor=0.0)


def test_profile_json_round_trip():
    prof = default_profile("b")
    doc = json.loads(json.dumps(prof.to_dict()))
    assert set(doc) == {"name", "base_speed", "depth_frac", "res_ref", "kappa",
                        "overhead", "noise_sigma", "capacity_floor"}
    assert DeviceProfile.from_dict(doc) == prof


def _samples_from(profile, space, loads, rng=None):
    out = []
    for load in loads:
        for a in space.all_actions:
            d = model_delay(profile, a, status(load), rng)
            out.append(DelaySample(a, load, d))
    return out


def test_calibration_round_trip_exact():
    space = build_action_space([128, 192, 256], 3)
    truth = make_profile(base_speed=1700.0, overhead=0.006)
    samples = _samples_from(truth, space, [0.0, 0.3, 0.6, 0.9])
    result = calibrate_profile(samples, make_profile(base_speed=999.0, overhead=0.0))
    assert result.fit_rmse < 1e-12
    assert result.profile.base_speed == pytest.approx(1700.0, rel=1e-6)
    assert result.profile.overhead == pytest.approx(0.006, rel=1e-6)


def test_calibration_with_noise():
    space = build_action_space([128, 192, 256], 3)
    truth = make_profile(base_speed=1700.0, overhead=0.006, noise_sigma=0.05)
    rng = np.random.default_rng(77)
    samples = _samples_from(truth, space, [0.0, 0.2, 0.4, 0.6, 0.8], rng)
    result = calibrate_profile(samples, make_profile())
    assert result.profile.base_speed == pytest.approx(1700.0, rel=0.05)


def test_calibration_single_load_rejected():
    space = build_action_space([128, 192, 256], 3)
    truth = make_profile()
    samples = _samples_from(truth, space, [0.5, 0.5, 0.5])
    with pytest.raises(CalibrationError):
        calibrate_profile(samples, truth)


def test_calibration_too_few_samples():
    space = build_action_space([128, 192, 256], 3)
    truth = make_profile()
    samples = _samples_from(truth, space, [0.1, 0.5])[:20]
    with pytest.raises(CalibrationError):
        calibrate_profile(samples, truth)


def test_calibration_result_dict_has_rmse():
    space = build_action_space([128, 192, 256], 3)
    truth = make_profile(base_speed=1500.0)
    samples = _samples_from(truth, space, [0.1, 0.4, 0.7])
    doc = calibrate_profile(samples, truth).to_dict()
    assert "fit_rmse" in doc


def test_measured_delay_zero_cost_near_timer_resolution():
    prof = make_profile(kappa=0.0)
    space = build_action_space([256], 1)
    workload = KernelWorkload(prof, macs_per_unit=1000)
    d = measured_delay(space.action(0, 0), workload)
    assert 0.0 <= d < 0.01
