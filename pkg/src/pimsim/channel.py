from __future__ import annotations

TO_MEM, TO_CPU = "to_mem", "to_cpu"


class Channel:
    """The processor-memory link: one FIFO per direction, fixed latency.

    A message occupies its direction for ``ceil(bytes / bandwidth)`` cycles
    starting when both it and the link are ready, then flies for ``latency``.
    """

    def __init__(self, bytes_per_cycle: int, latency: int, categories=()):
        if bytes_per_cycle < 1:
            raise ValueError("link bandwidth must be >= 1 byte/cycle")
        self.bandwidth = bytes_per_cycle
        self.latency = latency
        self.free_at = {TO_MEM: 0, TO_CPU: 0}
        self.bytes: dict[str, int] = {c: 0 for c in categories}
        self.messages = 0
        self.last_delivery = 0

    def send(self, direction: str, nbytes: int, now: int, category: str) -> int:
        start = max(now, self.free_at[direction])
        end = start + -(-nbytes // self.bandwidth)
        self.free_at[direction] = end
        self.bytes[category] = self.bytes.get(category, 0) + nbytes
        self.messages += 1
        delivery = end + self.latency
        if delivery > self.last_delivery:
            self.last_delivery = delivery
        return delivery

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes.values())


def channel_send(channel: Channel, direction: str, nbytes: int, now: int, category: str) -> int:
    return channel.send(direction, nbytes, now, category)
