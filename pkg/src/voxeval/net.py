"""Shared plumbing for remote backends: errors, retries, rate limiting."""
from __future__ import annotations

import threading
import time
from collections import deque
from contextlib import contextmanager
from typing import Any, Callable


class ProviderError(Exception):
    """Base class for completion/embedding backend failures."""


class ProviderConfigError(ProviderError):
    """The backend is misconfigured (missing credentials, bad config file)."""


class AuthenticationError(ProviderError):
    """The endpoint rejected our credentials; retrying will not help."""


class MalformedResponseError(ProviderError):
    """The endpoint answered but not in the configured shape."""


class RetryableError(ProviderError):
    """Transient failure (connection error, 429, 5xx); safe to retry."""


class RetryExhaustedError(ProviderError):
    """All retry attempts failed."""


def retry_with_backoff(
    attempt: Callable[[int], Any],
    *,
    max_retries: int,
    base_delay: float,
    cap_delay: float = 60.0,
    sleep: Callable[[float], None] = time.sleep,
) -> Any:
    """Call attempt(i) until it stops raising RetryableError.

    Delays grow as base_delay * 2**i, capped. After max_retries failed
    retries the last error is wrapped in RetryExhaustedError.
    """
    last: RetryableError | None = None
    for attempt_index in range(max_retries + 1):
        try:
            return attempt(attempt_index)
        except RetryableError as exc:
            last = exc
            if attempt_index == max_retries:
                break
            sleep(min(cap_delay, base_delay * (2 ** attempt_index)))
    raise RetryExhaustedError(f"gave up after {max_retries + 1} attempts: {last}") from last


class RateLimiter:
    """Blocking limiter: caps concurrent requests and requests per window.

    Requests are never dropped, only delayed until a slot frees up.
    """

    def __init__(
        self,
        max_in_flight: int | None = None,
        per_window: int | None = None,
        window_seconds: float = 60.0,
    ) -> None:
        self._semaphore = threading.Semaphore(max_in_flight) if max_in_flight else None
        self._per_window = per_window
        self._window_seconds = window_seconds
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def _wait_for_window(self) -> None:
        if self._per_window is None:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                while self._stamps and now - self._stamps[0] >= self._window_seconds:
                    self._stamps.popleft()
                if len(self._stamps) < self._per_window:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + self._window_seconds - now
            time.sleep(max(wait, 0.001))

    @contextmanager
    def slot(self):
        if self._semaphore is not None:
            self._semaphore.acquire()
        try:
            self._wait_for_window()
            yield
        finally:
            if self._semaphore is not None:
                self._semaphore.release()


def json_path(data: Any, path: str) -> Any:
    """Walk a dotted path ("choices.0.message.content") through parsed JSON."""
    current = data
    for part in path.split("."):
        if isinstance(current, list):
            try:
                current = current[int(part)]
            except (ValueError, IndexError) as exc:
                raise MalformedResponseError(f"bad index {part!r} in path {path!r}") from exc
        elif isinstance(current, dict):
            if part not in current:
                raise MalformedResponseError(f"missing key {part!r} in path {path!r}")
            current = current[part]
        else:
            raise MalformedResponseError(f"cannot descend into {type(current).__name__} at {part!r}")
    return current
