"""
Background batch producer.

A producer thread fills a bounded queue with immutable batches while the
trainer consumes them in order. Errors raised while producing are re-raised
in the consumer.
"""
import queue
import threading
from typing import Iterable, Iterator, Optional, TypeVar

from src.utils import log, settings

Item = TypeVar("Item")

_DONE = object()


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


class BatchProducer:
    """Producer thread feeding batches to a single consumer."""

    def __init__(self, source: Iterable[Item], depth: Optional[int] = None):
        """
        Initialize the producer.

        Args:
            source (iterable): Batches to hand over, in order
            depth (int, optional): Queue bound (defaults to settings.prefetch_depth)
        """
        self.source = source
        self.depth = depth or settings.prefetch_depth
        self.queue: "queue.Queue" = queue.Queue(maxsize=self.depth)
        self.running = False
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "BatchProducer":
        """Start producing in a daemon thread."""
        self.running = True
        self._thread = threading.Thread(target=self._produce, name="batch-producer", daemon=True)
        self._thread.start()
        log.debug(f"Started batch producer with depth {self.depth}")
        return self

    def _put(self, item) -> bool:
        while self.running:
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self):
        try:
            for item in self.source:
                if not self._put(item):
                    return
        except Exception as e:
            log.error(f"Batch producer failed: {str(e)}")
            self._put(_Failure(e))
            return
        self._put(_DONE)

    def __iter__(self) -> Iterator[Item]:
        if self._thread is None:
            self.start()
        try:
            while True:
                item = self.queue.get()
                if item is _DONE:
                    return
                if isinstance(item, _Failure):
                    raise item.error
                yield item
        finally:
            self.close()

    def close(self):
        """Stop the producer and wait for its thread."""
        self.running = False
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None


def prefetched(source: Iterable[Item], enabled: Optional[bool] = None) -> Iterable[Item]:
    """
    Wrap ``source`` in a BatchProducer when prefetching is enabled.

    Args:
        source (iterable): Batches, consumed in order either way
        enabled (bool, optional): Override of settings.prefetch
    """
    if enabled is None:
        enabled = settings.prefetch
    return BatchProducer(source) if enabled else source
