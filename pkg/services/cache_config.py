"""
cache_config.py

Process-wide memoization backed by cachelib's SimpleCache.
Keys are the qualified function name plus an MD5 fingerprint of the arguments.
"""

import functools
from typing import Any, Callable

from cachelib import SimpleCache

import config
from services.fingerprints import hash_payload
from services.logging_utils import log_msg

cache = SimpleCache(
    threshold=config.CACHE_THRESHOLD,
    default_timeout=config.CACHE_DEFAULT_TIMEOUT,
)


def make_key(fn: Callable, args: tuple, kwargs: dict) -> str:
    """Cache key for a call of fn with the given arguments."""
    return f"{fn.__module__}.{fn.__qualname__}:{hash_payload([list(args), kwargs])}"


def memoize(*ignore: str) -> Callable:
    """
    Memoizes a function on its arguments.

    Parameters:
        *ignore (str): Keyword arguments left out of the key (e.g. 'jobs',
            which never changes the result).

    Returns:
        Decorator.
    """
    def decorator(fn: Callable) -> Callable:
        @functools.wraps(fn)
        def wrapper(*args, **kwargs) -> Any:
            if not config.CACHE_ENABLED:
                return fn(*args, **kwargs)
            keyed = {k: v for k, v in kwargs.items() if k not in ignore}
            key = make_key(fn, args, keyed)
            hit = cache.get(key)
            if hit is not None:
                log_msg(f"[CACHE] Hit for {fn.__qualname__}")
                return hit
            value = fn(*args, **kwargs)
            cache.set(key, value)
            return value
        wrapper.uncached = fn
        return wrapper
    return decorator
