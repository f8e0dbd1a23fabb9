import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor

from django.conf import settings
from django.core.cache import cache

logger = logging.getLogger(__name__)


def config_digest(data):
    """Stable sha256 of a JSON-serialisable config mapping"""
    payload = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


class ResultCache:
    """Memoizes stage results in the Django cache, keyed by config digest"""

    @staticmethod
    def _key(digest, stage):
        return f"morse:{stage}:{digest}"

    @staticmethod
    def get(digest, stage):
        try:
            value = cache.get(ResultCache._key(digest, stage))
        except Exception as e:
            logger.warning(f"Result cache unavailable for {stage}: {e}")
            return None
        if value is not None:
            logger.info(f"Result cache hit: {stage} ({digest[:12]})")
        return value

    @staticmethod
    def set(digest, stage, value):
        try:
            cache.set(ResultCache._key(digest, stage), value, settings.MORSE_RESULT_CACHE_TIMEOUT)
        except Exception as e:
            logger.warning(f"Could not cache {stage}: {e}")

    @staticmethod
    def get_or_compute(digest, stage, compute):
        value = ResultCache.get(digest, stage)
        if value is None:
            logger.info(f"Computing stage: {stage}")
            value = compute()
            ResultCache.set(digest, stage, value)
        return value


def default_workers():
    return max(1, int(getattr(settings, 'MORSE_WORKERS', 1)))


def parallel_map(fn, items, workers=None):
    """Ordered map over items; runs in a process pool when workers > 1."""
    items = list(items)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
