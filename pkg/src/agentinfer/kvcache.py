"""Paged KV-cache block pool with prefix caching and LRU eviction.

Only full blocks are hashed. A block's hash commits to the hash of the block
before it, so a cached prefix is a contiguous chain starting at block 0.
Blocks whose reference count drops to zero stay in the hash index and can be
reused until they are evicted (least recently used first).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

_ROOT = 0x9E3779B97F4A7C15


class ContractViolation(RuntimeError):
    """Caller broke a pool contract (double release, unknown request...)."""


def block_hashes(tokens: Sequence[int], tpb: int, start: int = 0, parent: int = _ROOT) -> list[int]:
    """Chain hashes of the full blocks of ``tokens``.

    ``start``/``parent`` let callers hash incrementally: pass the index of the
    first unhashed block and the hash of the block before it.
    """
    out = []
    h = parent
    n_full = len(tokens) // tpb
    for b in range(start, n_full):
        h = hash((h, tuple(tokens[b * tpb : (b + 1) * tpb])))
        out.append(h)
    return out


class PrefixHasher:
    """Incremental block hashes for an append-only token buffer."""

    def __init__(self, tpb: int) -> None:
        self.tpb = tpb
        self.hashes: list[int] = []

    def update(self, tokens: Sequence[int]) -> list[int]:
        parent = self.hashes[-1] if self.hashes else _ROOT
        self.hashes.extend(block_hashes(tokens, self.tpb, len(self.hashes), parent))
        return self.hashes

    def reset(self) -> None:
        self.hashes.clear()


@dataclass(frozen=True)
class RequestFootprint:
    hit: int
    need: int
    prompt_tok: int


@dataclass
class Block:
    block_id: int
    prefix_hash: int | None = None
    refcount: int = 0
    last_use: float = 0.0
    depth: int = 0


@dataclass
class Allocation:
    request_id: str
    blocks: list[int]
    hit: int
    need: int
    prompt_hashes: list[int]
    extra: int = 0


@dataclass
class PoolStats:
    admissions: int = 0
    hit_blocks: int = 0
    need_blocks: int = 0
    evictions: int = 0
    rejections: int = 0


class BlockPool:
    """Fixed arena of ``total_blocks`` KV blocks of ``tokens_per_block`` tokens.

    Every block is in exactly one state: free (never used or evicted),
    cached (hashed, refcount 0, evictable) or pinned (refcount > 0).
    """

    def __init__(self, total_blocks: int, tokens_per_block: int = 16) -> None:
        if total_blocks <= 0:
            raise ValueError("total_blocks must be positive")
        if tokens_per_block < 1:
            raise ValueError("tokens_per_block must be >= 1")
        self.total_blocks = total_blocks
        self.tpb = tokens_per_block
        self.blocks = [Block(i) for i in range(total_blocks)]
        self.hash_index: dict[int, int] = {}
        self._free: list[int] = list(range(total_blocks - 1, -1, -1))
        # lazy LRU heap of (last_use, -depth, seq, block_id); stale entries skipped
        self._lru: list[tuple[float, int, int, int]] = []
        self._lru_seq = 0
        self._evictable = 0
        self.allocs: dict[str, Allocation] = {}
        self.stats = PoolStats()
        self.version = 0
        # bumped only when the hash index changes, i.e. when footprints can change
        self.index_version = 0

    # -- accounting -------------------------------------------------------

    @property
    def free_blocks(self) -> int:
        """Blocks holding nothing at all."""
        return len(self._free)

    @property
    def evictable_blocks(self) -> int:
        return self._evictable

    @property
    def allocated_blocks(self) -> int:
        return self.total_blocks - len(self._free)

    @property
    def pinned_blocks(self) -> int:
        return self.total_blocks - len(self._free) - self._evictable

    @property
    def available_blocks(self) -> int:
        """Blocks an admission could obtain: free plus evictable."""
        return len(self._free) + self._evictable

    def hashes_for(self, prompt: Sequence[int]) -> list[int]:
        return block_hashes(prompt, self.tpb)

    def footprint(self, prompt: Sequence[int] | int, hashes: Sequence[int] | None = None) -> RequestFootprint:
        """Blocks of ``prompt`` already cached (leading chain) and blocks still needed.

        ``prompt`` may be the token list or just its length when ``hashes``
        is supplied.
        """
        prompt_tok = prompt if isinstance(prompt, int) else len(prompt)
        if hashes is None:
            hashes = self.hashes_for(prompt)
        hit = 0
        index = self.hash_index
        for h in hashes:
            if h not in index:
                break
            hit += 1
        total = math.ceil(prompt_tok / self.tpb)
        return RequestFootprint(hit, total - hit, prompt_tok)

    # -- internals --------------------------------------------------------

    def _push_lru(self, b: Block) -> None:
        self._lru_seq += 1
        heapq.heappush(self._lru, (b.last_use, -b.depth, self._lru_seq, b.block_id))

    def _evict_one(self) -> int:
        while self._lru:
            last_use, _, _, bid = heapq.heappop(self._lru)
            b = self.blocks[bid]
            if b.refcount == 0 and b.prefix_hash is not None and b.last_use == last_use:
                del self.hash_index[b.prefix_hash]
                b.prefix_hash = None
                self.index_version += 1
                self._evictable -= 1
                self.stats.evictions += 1
                return bid
        raise ContractViolation("no evictable block although accounting said otherwise")

    def _take(self) -> int:
        if self._free:
            return self._free.pop()
        return self._evict_one()

    def _pin(self, bid: int, now: float) -> None:
        b = self.blocks[bid]
        if b.refcount == 0 and b.prefix_hash is not None:
            self._evictable -= 1
        b.refcount += 1
        b.last_use = now

    # -- operations -------------------------------------------------------

    def can_admit(self, fp: RequestFootprint, hashes: Sequence[int], extra_blocks: int = 0) -> bool:
        # pinning idle hit blocks removes them from the evictable set
        idle_hits = sum(1 for h in hashes[: fp.hit] if self.blocks[self.hash_index[h]].refcount == 0)
        return fp.need + extra_blocks <= self.available_blocks - idle_hits

    def admit(
        self,
        request_id: str,
        fp: RequestFootprint,
        hashes: Sequence[int],
        now: float = 0.0,
        extra_blocks: int = 0,
    ) -> Allocation | None:
        """Pin the cached prefix and allocate the rest; ``None`` if it does not fit.

        ``extra_blocks`` reserves room for decode-phase growth. A rejected
        admission leaves the pool untouched.
        """
        if request_id in self.allocs:
            raise ContractViolation(f"request {request_id} already admitted")
        if not self.can_admit(fp, hashes, extra_blocks):
            self.stats.rejections += 1
            return None
        blocks = []
        for h in hashes[: fp.hit]:
            bid = self.hash_index[h]
            self._pin(bid, now)
            blocks.append(bid)
        for _ in range(fp.need + extra_blocks):
            bid = self._take()
            b = self.blocks[bid]
            b.refcount, b.last_use, b.prefix_hash = 1, now, None
            blocks.append(bid)
        alloc = Allocation(request_id, blocks, fp.hit, fp.need, list(hashes), extra_blocks)
        self.allocs[request_id] = alloc
        self.stats.admissions += 1
        self.stats.hit_blocks += fp.hit
        self.stats.need_blocks += fp.need
        self.version += 1
        return alloc

    def grow(self, request_id: str, n: int = 1, now: float = 0.0) -> bool:
        """Allocate ``n`` more blocks for a running request (decode growth)."""
        alloc = self._get(request_id)
        if n > self.available_blocks:
            return False
        for _ in range(n):
            bid = self._take()
            b = self.blocks[bid]
            b.refcount, b.last_use, b.prefix_hash = 1, now, None
            alloc.blocks.append(bid)
        self.version += 1
        return True

    def release(self, request_id: str, hashes: Sequence[int] | None = None, now: float = 0.0) -> None:
        """Unpin a request's blocks, registering content hashes so they can be hit later.

        ``hashes`` are the chain hashes of the request's final token content
        (prompt plus output); defaults to the prompt hashes recorded at admission.
        Blocks beyond the hashed content go straight back to the free list.
        """
        alloc = self.allocs.pop(request_id, None)
        if alloc is None:
            raise ContractViolation(f"release of unknown or already released request {request_id}")
        if hashes is None:
            hashes = alloc.prompt_hashes
        for depth, bid in enumerate(alloc.blocks):
            b = self.blocks[bid]
            b.refcount -= 1
            b.last_use = now
            if b.refcount < 0:
                raise ContractViolation(f"negative refcount on block {bid}")
            if depth < len(hashes) and b.prefix_hash is None:
                h = hashes[depth]
                if h not in self.hash_index:
                    b.prefix_hash = h
                    b.depth = depth
                    self.hash_index[h] = bid
                    self.index_version += 1
            if b.refcount == 0:
                if b.prefix_hash is None:
                    self._free.append(bid)
                else:
                    self._evictable += 1
                    self._push_lru(b)
        self.version += 1

    def prewarm(self, hashes: Sequence[int], now: float = 0.0) -> int:
        """Make a chain of blocks resident without a running request.

        Used for KV computed off the critical path. Returns how many new
        blocks were written; stops early if the pool has no room. Blocks of
        the chain itself are never evicted to make room for its tail.
        """
        # pin the chain while writing so its own blocks are never the eviction victims
        held: list[int] = []
        written = 0
        for depth, h in enumerate(hashes):
            bid = self.hash_index.get(h)
            if bid is None:
                if self.available_blocks == 0:
                    break
                bid = self._take()
                b = self.blocks[bid]
                b.refcount, b.prefix_hash, b.depth = 1, h, depth
                self.hash_index[h] = bid
                self.index_version += 1
                written += 1
            else:
                self._pin(bid, now)
            held.append(bid)
        for bid in held:
            b = self.blocks[bid]
            b.refcount -= 1
            b.last_use = now
            if b.refcount == 0:
                self._evictable += 1
                self._push_lru(b)
        self.version += 1
        return written

    def _get(self, request_id: str) -> Allocation:
        try:
            return self.allocs[request_id]
        except KeyError:
            raise ContractViolation(f"unknown request {request_id}") from None

    def check(self) -> None:
        """Assert internal invariants (cheap enough for tests)."""
        pinned = sum(1 for b in self.blocks if b.refcount > 0)
        cached = sum(1 for b in self.blocks if b.refcount == 0 and b.prefix_hash is not None)
        assert pinned + cached + len(self._free) == self.total_blocks
        assert cached == self._evictable
        assert len(self.hash_index) == sum(1 for b in self.blocks if b.prefix_hash is not None)
        assert all(b.refcount >= 0 for b in self.blocks)


def hit_rate(stats: PoolStats) -> float:
    """Fraction of admitted prompt blocks served from cache."""
    total = stats.hit_blocks + stats.need_blocks
    if stats.admissions == 0 or total == 0:
        raise ZeroDivisionError("hit rate needs at least one admission")
    return stats.hit_blocks / total


def footprint(pool: BlockPool, prompt: Sequence[int]) -> RequestFootprint:
    return pool.footprint(prompt)


def admit(pool: BlockPool, request_id: str, prompt: Sequence[int], now: float = 0.0) -> Allocation | None:
    hashes = pool.hashes_for(prompt)
    return pool.admit(request_id, pool.footprint(len(prompt), hashes), hashes, now)


def release(pool: BlockPool, request_id: str, now: float = 0.0) -> None:
    pool.release(request_id, now=now)
