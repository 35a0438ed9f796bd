"""Deterministic mock language models.

:class:`MockOracle` imitates an agent model that keeps quoting material it
has seen: with probability ``rho`` per position it continues the most recent
earlier occurrence of the longest matching suffix (up to ``order`` tokens) of
its context, falling back to a fixed background text (the "knowledge" the
model has memorised), and starts a fresh quote from that text when neither
matches. Otherwise it emits a pseudo-random token. Every decision is a
hash of ``(seed, position, recent tokens)``, so output depends only on the
seed and the context.

The context index is maintained incrementally. Callers that pass the same
list object again are trusted to have only appended to it (or truncated a
speculative tail); a fresh list is compared against the indexed prefix in
full.
"""

from __future__ import annotations

from typing import Sequence

MASK64 = (1 << 64) - 1
_UNIT = float(1 << 53)
_WINDOW = 64


def mix64(x: int) -> int:
    """splitmix64 finaliser."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash_ints(*xs: int) -> int:
    h = 0x243F6A8885A308D3
    for x in xs:
        h = mix64(h ^ (x & MASK64))
    return h


def unit(*xs: int) -> float:
    return (hash_ints(*xs) >> 11) / _UNIT


class KnowledgeIndex:
    """Static suffix lookup over a background text: gram -> follower token."""

    def __init__(self, corpus: Sequence[int], order: int) -> None:
        self.corpus = tuple(corpus)
        self.order = order
        self.maps: list[dict[tuple[int, ...], int]] = [dict() for _ in range(order)]
        c = self.corpus
        for i in range(1, len(c)):
            for o in range(1, min(order, i) + 1):
                # first occurrence wins: the memorised text is read front to back
                self.maps[o - 1].setdefault(c[i - o : i], c[i])

    def lookup(self, toks: Sequence[int], max_order: int) -> int | None:
        n = len(toks)
        for o in range(min(max_order, self.order, n), 0, -1):
            f = self.maps[o - 1].get(tuple(toks[n - o :]))
            if f is not None:
                return f
        return None


class MockOracle:
    """Greedy next-token model with controllable repetition.

    Args:
        seed: identity of the model instance; distinct seeds give unrelated
            pseudo-random tokens.
        vocab_size: tokens are drawn from ``range(vocab_size)``.
        rho: probability, per position, of continuing an earlier match.
        order: longest suffix considered when looking for a match.
        knowledge: optional background text used when the context has no match.
        replay: if given, the oracle ignores content and replays this corpus
            verbatim, starting at a seed-derived offset.
    """

    def __init__(
        self,
        seed: int,
        vocab_size: int,
        rho: float = 0.0,
        order: int = 4,
        knowledge: KnowledgeIndex | Sequence[int] | None = None,
        replay: Sequence[int] | None = None,
    ) -> None:
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if order < 1:
            raise ValueError("order must be >= 1")
        self.seed = seed
        self.vocab_size = vocab_size
        self.rho = rho
        self.order = order
        if knowledge is not None and not isinstance(knowledge, KnowledgeIndex):
            knowledge = KnowledgeIndex(knowledge, order)
        self.knowledge = knowledge
        self.replay = tuple(replay) if replay is not None else None
        self._replay_shift = seed % len(self.replay) if self.replay else 0
        self._toks: list[int] = []
        self._maps: list[dict[tuple[int, ...], int]] = [dict() for _ in range(order)]
        self._undo: list[list[tuple[int, tuple[int, ...], int | None]]] = []
        self._undo_base = 0
        self._obj: list[int] | None = None
        self.calls = 0

    # -- index maintenance -------------------------------------------------

    def _push(self, t: int) -> None:
        toks, maps = self._toks, self._maps
        i = len(toks)
        toks.append(t)
        log = []
        for o in range(1, min(self.order, i) + 1):
            gram = tuple(toks[i - o : i])
            m = maps[o - 1]
            log.append((o, gram, m.get(gram)))
            m[gram] = i
        self._undo.append(log)

    def _truncate(self, n: int) -> None:
        if n >= len(self._toks):
            return
        if n < self._undo_base:
            self._rebuild(self._toks[:n])
            return
        maps = self._maps
        while len(self._toks) > n:
            self._toks.pop()
            for o, gram, prev in reversed(self._undo.pop()):
                if prev is None:
                    del maps[o - 1][gram]
                else:
                    maps[o - 1][gram] = prev

    def _rebuild(self, toks: Sequence[int]) -> None:
        self._toks = []
        self._maps = [dict() for _ in range(self.order)]
        self._undo = []
        self._undo_base = 0
        self._extend_bulk(toks)

    def _extend_bulk(self, tokens: Sequence[int]) -> None:
        """Index caller-supplied context; these positions are never rolled back one by one."""
        toks = self._toks
        s = len(toks)
        toks.extend(tokens)
        n = len(toks)
        for o in range(1, self.order + 1):
            start = max(s, o)
            if start >= n:
                continue
            grams = zip(*(toks[start - o + j : n - o + j] for j in range(o)))
            self._maps[o - 1].update(zip(grams, range(start, n)))
        self._undo = []
        self._undo_base = n

    def _common_prefix(self, ctx: Sequence[int]) -> int:
        toks = self._toks
        p = min(len(ctx), len(toks))
        if ctx is self._obj:
            lo = max(0, p - _WINDOW)
            if ctx[lo:p] == toks[lo:p]:
                return p
        elif ctx[:p] == toks[:p]:
            return p
        lo, hi = 0, p
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if ctx[:mid] == toks[:mid]:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def _sync(self, ctx: Sequence[int]) -> None:
        common = self._common_prefix(ctx)
        self._truncate(common)
        if common < len(ctx):
            self._extend_bulk(ctx[common:])
        self._obj = ctx if isinstance(ctx, list) else None

    # -- prediction -------------------------------------------------------

    def _predict(self) -> int:
        toks = self._toks
        n = len(toks)
        if self.replay is not None:
            return self.replay[(n + self._replay_shift) % len(self.replay)]
        last = toks[-1] if toks else -1
        if self.rho > 0.0 and unit(self.seed, n, 1) < self.rho:
            for o in range(min(self.order, n), 0, -1):
                p = self._maps[o - 1].get(tuple(toks[n - o :]))
                if p is not None:
                    return toks[p]
            if self.knowledge is not None:
                f = self.knowledge.lookup(toks, self.order)
                if f is not None:
                    return f
                # nothing to continue: start quoting the background text somewhere
                c = self.knowledge.corpus
                return c[hash_ints(self.seed, n, last, 3) % len(c)]
        return hash_ints(self.seed, n, last, 2) % self.vocab_size

    def next_tokens(self, context: Sequence[int], n: int) -> list[int]:
        self.calls += 1
        self._sync(context)
        base = len(self._toks)
        for _ in range(n):
            self._push(self._predict())
        return self._toks[base : base + n]

    def next_token(self, context: Sequence[int]) -> int:
        return self.next_tokens(context, 1)[0]
