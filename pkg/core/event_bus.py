# core/event_bus.py

import logging
from collections import defaultdict
from typing import Any, Callable, Dict, List, Optional


class ArchiveEvent:
    """
    One entry of the archive's event log.
    Categories: placed_new, replaced, remap_begin, remap_place, remap_move, displaced.
    """

    __slots__ = ("seq", "category", "generation", "data")

    def __init__(self, seq: int, category: str, generation: int, data: Optional[dict] = None):
        self.seq = seq
        self.category = category
        self.generation = generation
        self.data = data or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seq": self.seq,
            "category": self.category,
            "generation": self.generation,
            **self.data,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ArchiveEvent":
        body = {k: v for k, v in payload.items() if k not in ("seq", "category", "generation")}
        return cls(int(payload["seq"]), str(payload["category"]), int(payload["generation"]), body)

    def __eq__(self, other):
        return isinstance(other, ArchiveEvent) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"ArchiveEvent({self.to_dict()!r})"


class EventBus:
    """Synchronous category bus; subscribers on "*" receive every event."""

    def __init__(self):
        self.subscribers: Dict[str, List[Callable[[ArchiveEvent], None]]] = defaultdict(list)

    def subscribe(self, category: str, callback: Callable[[ArchiveEvent], None]):
        self.subscribers[category].append(callback)
        logging.debug(f"[EventBus] {getattr(callback, '__name__', callback)} <- {category}")

    def unsubscribe_all(self):
        self.subscribers.clear()

    def emit(self, event: ArchiveEvent):
        for cb in list(self.subscribers.get(event.category, [])):
            self._deliver(cb, event)
        for cb in list(self.subscribers.get("*", [])):
            self._deliver(cb, event)

    @staticmethod
    def _deliver(cb, event):
        try:
            cb(event)
        except Exception as e:
            logging.error(f"[EventBus] Subscriber {getattr(cb, '__name__', cb)} failed: {e}")

    def __getstate__(self):
        # subscribers are process-local (open files, loggers)
        return {}

    def __setstate__(self, state):
        self.subscribers = defaultdict(list)
