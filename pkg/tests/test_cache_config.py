# tests/test_cache_config.py

from cachelib import SimpleCache

import config
from services import cache_config
from services.cache_config import cache, make_key, memoize

def test_cache_instance():
    """Test that the cache object is a cachelib SimpleCache."""
    assert isinstance(cache, SimpleCache)

def test_make_key_depends_on_arguments():
    """Keys differ across arguments and are stable for equal arguments."""
    def fn(a, b=1):
        return a + b

    assert make_key(fn, (1,), {"b": 2}) == make_key(fn, (1,), {"b": 2})
    assert make_key(fn, (1,), {"b": 2}) != make_key(fn, (1,), {"b": 3})
    assert make_key(fn, (1,), {}).startswith(f"{fn.__module__}.")

def test_memoize_hits_cache_and_ignores_keys(monkeypatch, caplog):
    """A second call with a different ignored keyword is a cache hit."""
    monkeypatch.setattr(config, "CACHE_ENABLED", True)
    monkeypatch.setattr("services.logging_utils.ENABLE_LOGGING", True)
    cache_config.cache.clear()
    calls = []

    @memoize("jobs")
    def square(x, jobs=None):
        calls.append(x)
        return x * x

    with caplog.at_level("INFO"):
        assert square(3, jobs=1) == 9
        assert square(3, jobs=4) == 9

    assert calls == [3]
    assert any("[CACHE] Hit" in record.message for record in caplog.records)

def test_memoize_disabled_calls_through():
    """With caching off (the test default) every call runs the function."""
    calls = []

    @memoize()
    def ident(x):
        calls.append(x)
        return x

    ident(1)
    ident(1)
    assert calls == [1, 1]
    assert ident.uncached(2) == 2
