# tests/test_cached_funs.py

import numpy as np

import config
from services import cache_config
from services.cached_funs import calibrate_cached, null_statistics_cached

def test_calibrate_cached_basic(gaussian_identity_spec):
    """Test that the cached calibration returns a calibrated spec."""
    spec = gaussian_identity_spec
    calibrated = calibrate_cached(spec, spec.q0, 0.5, 200, 11)

    assert calibrated.is_calibrated
    assert calibrated.encoder == spec.encoder
    assert np.isfinite(calibrated.threshold)

def test_calibrate_cached_reuses_result(monkeypatch, gaussian_identity_spec):
    """With caching on, a repeat call returns the stored spec whatever jobs is."""
    monkeypatch.setattr(config, "CACHE_ENABLED", True)
    cache_config.cache.clear()
    spec = gaussian_identity_spec

    first = calibrate_cached(spec, spec.q0, 0.5, 200, 11, jobs=1)
    calls = []
    monkeypatch.setattr(
        "services.cached_funs.calibrate",
        lambda *args, **kwargs: calls.append(args),
    )
    second = calibrate_cached(spec, spec.q0, 0.5, 200, 11, jobs=3)

    assert calls == []
    assert second.threshold == first.threshold

def test_null_statistics_cached_matches_threshold(gaussian_identity_spec):
    """The threshold is an order statistic of the cached null sample."""
    spec = gaussian_identity_spec
    stats = null_statistics_cached(spec, spec.q0, 200, 5)
    calibrated = calibrate_cached(spec, spec.q0, 0.5, 200, 5)

    assert stats.shape == (200,)
    assert calibrated.threshold in set(stats.tolist())
