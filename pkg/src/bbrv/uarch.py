"""Caches and branch predictors used by the pipeline model."""
from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    pass


def _pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    enabled: bool = True
    size: int = 4096
    line: int = 32
    miss_penalty: int = 10

    def validate(self) -> None:
        if not (_pow2(self.size) and _pow2(self.line) and self.line <= self.size):
            raise ConfigError(f"cache geometry {self.size}/{self.line} must be powers of two")
        if self.miss_penalty < 0:
            raise ConfigError("miss penalty must be non-negative")


class DirectMappedCache:
    """Tag store only; data always comes from the backing memory."""

    def __init__(self, cfg: CacheConfig):
        cfg.validate()
        self.cfg = cfg
        self.nlines = cfg.size // cfg.line
        self.shift = cfg.line.bit_length() - 1
        self.tags: list = [None] * self.nlines

    def line_addr(self, addr: int) -> int:
        return addr >> self.shift << self.shift

    def contains(self, addr: int) -> bool:
        if not self.cfg.enabled:
            return True
        blk = addr >> self.shift
        return self.tags[blk % self.nlines] == blk

    def access(self, addr: int) -> bool:
        """Look up ``addr``; on a miss install the line.  Returns hit."""
        if not self.cfg.enabled:
            return True
        blk = addr >> self.shift
        k = blk % self.nlines
        if self.tags[k] == blk:
            return True
        self.tags[k] = blk
        return False


class Bht:
    """Table of 2-bit saturating counters indexed by ``pc[log2(n)+1:2]``."""

    def __init__(self, entries: int = 64, init: int = 1):
        if not _pow2(entries):
            raise ConfigError("BHT size must be a power of two")
        self.mask = entries - 1
        self.ctr = [init] * entries

    def index(self, pc: int) -> int:
        return (pc >> 2) & self.mask

    def predict(self, pc: int) -> bool:
        return self.ctr[(pc >> 2) & self.mask] >= 2

    def update(self, pc: int, taken: bool) -> int | None:
        """Train the counter; returns its index when the stored value changed."""
        k = (pc >> 2) & self.mask
        old = self.ctr[k]
        new = min(3, old + 1) if taken else max(0, old - 1)
        if new == old:
            return None
        self.ctr[k] = new
        return k


class Btb:
    """Direct-mapped branch target buffer holding (tag, target, unconditional)."""

    def __init__(self, entries: int = 64):
        if not _pow2(entries):
            raise ConfigError("BTB size must be a power of two")
        self.mask = entries - 1
        self.entries: list = [None] * entries

    def lookup(self, pc: int):
        e = self.entries[(pc >> 2) & self.mask]
        return e if e is not None and e[0] == pc else None

    def update(self, pc: int, target: int, uncond: bool) -> int | None:
        k = (pc >> 2) & self.mask
        new = (pc, target, uncond)
        if self.entries[k] == new:
            return None
        self.entries[k] = new
        return k
