"""Phase timing for runs; summaries land in ``metadata.json``."""

import time
from collections import defaultdict
from contextlib import contextmanager
from typing import Iterator


class Timer:
    """Wall-clock seconds per named phase, keyed by dotted path.

    >>> timer = Timer("train")
    >>> with timer.section("encoder"):
    ...     with timer.section("epoch"):
    ...         pass
    >>> sorted(timer.get_summary())
    ['encoder', 'encoder.epoch']
    """

    def __init__(self, name: str = "run"):
        self.name = name
        self._seconds: defaultdict[str, float] = defaultdict(float)
        self._stack: list[str] = []

    @contextmanager
    def section(self, name: str) -> Iterator[None]:
        self._stack.append(name)
        key = ".".join(self._stack)
        started = time.perf_counter()
        try:
            yield
        finally:
            self._seconds[key] += time.perf_counter() - started
            self._stack.pop()

    def get_summary(self) -> dict[str, float]:
        return dict(self._seconds)

    def get_total(self, prefix: str = "") -> float:
        """Seconds spent in top-level sections whose name starts with ``prefix``."""
        return sum(v for k, v in self._seconds.items() if "." not in k and k.startswith(prefix))

    def format_summary(self, indent: int = 2) -> str:
        rows = [f"{self.name}: {self.get_total():.3f}s"]
        for key in sorted(self._seconds):
            depth = key.count(".") + 1
            rows.append(f"{' ' * indent * depth}{key.rsplit('.', 1)[-1]} {self._seconds[key]:.3f}s")
        return "\n".join(rows)
