"""
Bounded LRU cache for ADMM factorizations
"""

import logging
from collections import OrderedDict
from threading import Lock
from typing import Any, Dict, Generic, Hashable, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')


class FactorCache(Generic[T]):
    """
    Thread-safe LRU cache with bounded size.

    The ADMM u-update factor depends only on the batch and rho, so a lambda
    sweep over one batch hits the same entry at every grid point.

    Usage:
        cache = FactorCache[tuple](max_size=32)
        cache.set((batch.key, 1.0), factor)
        factor = cache.get((batch.key, 1.0))  # None on a miss
    """

    def __init__(self, max_size: int = 32, name: str = "factors"):
        """
        Initialize the cache.

        Args:
            max_size: Maximum number of entries before LRU eviction
            name: Name for logging purposes
        """
        if max_size < 1:
            raise ValueError("max_size must be at least 1")
        self._max_size = max_size
        self._name = name
        self._cache: "OrderedDict[Hashable, T]" = OrderedDict()
        self._lock = Lock()
        self._hits = 0
        self._misses = 0

    def get(self, key: Hashable) -> Optional[T]:
        """
        Get a value from the cache.

        Args:
            key: Cache key

        Returns:
            Cached value, or None on a miss
        """
        with self._lock:
            if key not in self._cache:
                self._misses += 1
                return None
            self._hits += 1
            self._cache.move_to_end(key)
            return self._cache[key]

    def set(self, key: Hashable, value: T) -> None:
        """Insert or refresh an entry, evicting the least recently used."""
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
            else:
                while len(self._cache) >= self._max_size:
                    oldest_key, _ = self._cache.popitem(last=False)
                    logger.debug(f"[{self._name}] Evicted oldest entry: {oldest_key}")
            self._cache[key] = value

    def delete(self, key: Hashable) -> bool:
        with self._lock:
            if key in self._cache:
                del self._cache[key]
                return True
            return False

    def clear(self) -> None:
        """Clear all entries and counters."""
        with self._lock:
            self._cache.clear()
            self._hits = 0
            self._misses = 0
            logger.debug(f"[{self._name}] Cache cleared")

    @property
    def size(self) -> int:
        return len(self._cache)

    def stats(self) -> Dict[str, Any]:
        with self._lock:
            return {
                'name': self._name,
                'size': len(self._cache),
                'max_size': self._max_size,
                'hits': self._hits,
                'misses': self._misses,
            }
