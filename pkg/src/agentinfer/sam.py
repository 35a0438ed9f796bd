"""Online suffix automaton over integer token streams.

The automaton indexes every substring of an append-only token corpus and is
used as a zero-cost draft model: given the tail of the verified output, it
finds an earlier occurrence of that tail and proposes the tokens that
followed it.

Several corpora can be queried together through :class:`CompositeDraftSource`,
which keeps one live (growing) session automaton plus any number of frozen
automata built from retrieved history, each with a weight.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

# Sentinel ids live far above any realistic vocabulary so they can never be
# confused with model tokens.
SENTINEL_BASE = 1 << 40

RECORDED = "recorded"
LATEST = "latest"
_POLICIES = (RECORDED, LATEST)


class SamError(Exception):
    """Base class for automaton errors."""


class SamCapacityError(SamError):
    """Raised when an extension would exceed the configured state budget.

    Callers are expected to disable speculation for the affected corpus.
    """


class FrozenAutomatonError(SamError):
    pass


def is_sentinel(token: int) -> bool:
    return token >= SENTINEL_BASE


@dataclass(frozen=True)
class MatchCursor:
    """Position of the longest suffix of a token stream matched in an automaton."""

    state: int = 0
    match_len: int = 0


class SuffixAutomaton:
    """Suffix automaton built incrementally, one token at a time.

    States are stored as parallel lists (length, suffix link, transitions,
    representative end position). State 0 is the root.

    Args:
        vocab_size: if given, tokens must be ``< vocab_size`` or sentinels.
        max_states: optional state budget; exceeding it raises
            :class:`SamCapacityError` and leaves the automaton unchanged.
        occurrence: which end position a state reports for drafting.
            ``"recorded"`` keeps the end position seen when the state was
            created (the latest occurrence at that moment, which always has a
            continuation except for the state of the whole corpus).
            ``"latest"`` keeps the true most recent occurrence, updated on
            every extension by walking suffix links.
    """

    def __init__(
        self,
        vocab_size: int | None = None,
        max_states: int | None = None,
        occurrence: str = RECORDED,
    ) -> None:
        if occurrence not in _POLICIES:
            raise ValueError(f"unknown occurrence policy {occurrence!r}")
        self.vocab_size = vocab_size
        self.max_states = max_states
        self.occurrence = occurrence
        self.corpus: list[int] = []
        self.length: list[int] = [0]
        self.link: list[int] = [-1]
        self.next: list[dict[int, int]] = [{}]
        self.end_pos: list[int] = [-1]
        self.last = 0
        self._frozen = False
        self._sentinels = itertools.count(SENTINEL_BASE)

    # -- construction -----------------------------------------------------

    @property
    def num_states(self) -> int:
        return len(self.length)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> SuffixAutomaton:
        """Forbid further extension; the automaton may then be shared read-only."""
        self._frozen = True
        return self

    def __len__(self) -> int:
        return len(self.corpus)

    def _check_token(self, token: int) -> None:
        if token < 0:
            raise ValueError(f"token ids must be non-negative, got {token}")
        if self.vocab_size is not None and token >= self.vocab_size and not is_sentinel(token):
            raise ValueError(f"token {token} outside vocabulary of size {self.vocab_size}")

    def extend(self, token: int) -> None:
        """Append one token to the corpus and restore the automaton invariants."""
        if self._frozen:
            raise FrozenAutomatonError("cannot extend a frozen automaton")
        self._check_token(token)
        if self.max_states is not None and self.num_states + 2 > self.max_states:
            raise SamCapacityError(
                f"state budget {self.max_states} exhausted at corpus length {len(self.corpus)}"
            )
        length, link, nxt, end = self.length, self.link, self.next, self.end_pos
        pos = len(self.corpus)
        self.corpus.append(token)

        cur = len(length)
        length.append(length[self.last] + 1)
        link.append(0)
        nxt.append({})
        end.append(pos)

        p = self.last
        while p != -1 and token not in nxt[p]:
            nxt[p][token] = cur
            p = link[p]
        if p != -1:
            q = nxt[p][token]
            if length[p] + 1 == length[q]:
                link[cur] = q
            else:
                clone = len(length)
                length.append(length[p] + 1)
                link.append(link[q])
                nxt.append(dict(nxt[q]))
                end.append(end[q])
                while p != -1 and nxt[p].get(token) == q:
                    nxt[p][token] = clone
                    p = link[p]
                link[q] = clone
                link[cur] = clone
        self.last = cur

        if self.occurrence == LATEST:
            s = link[cur]
            while s > 0:
                end[s] = pos
                s = link[s]

    def extend_many(self, tokens: Iterable[int]) -> None:
        for t in tokens:
            self.extend(t)

    def new_sentinel(self) -> int:
        return next(self._sentinels)

    def add_document(self, tokens: Sequence[int]) -> None:
        """Append a document, separated from earlier content by a fresh sentinel.

        Matches can never span two documents because each sentinel occurs once.
        """
        if self.corpus:
            self.extend(self.new_sentinel())
        self.extend_many(tokens)

    # -- queries ----------------------------------------------------------

    def accepts(self, seq: Sequence[int]) -> bool:
        """True iff ``seq`` is a substring of the corpus."""
        s = 0
        nxt = self.next
        for t in seq:
            s = nxt[s].get(t, -1)
            if s < 0:
                return False
        return True

    def cursor(self) -> MatchCursor:
        return MatchCursor()

    def _normalize(self, s: int, n: int) -> int:
        # A live automaton may have split the cursor's state since the cursor
        # was taken; the matched string then lives further down the link chain.
        link, length = self.link, self.length
        while s > 0 and n <= length[link[s]]:
            s = link[s]
        return s

    def advance(self, cursor: MatchCursor, token: int) -> MatchCursor:
        """Extend the matched suffix by ``token``, shortening it as needed."""
        n = cursor.match_len
        s = self._normalize(cursor.state, n)
        nxt, link, length = self.next, self.link, self.length
        while s != -1 and token not in nxt[s]:
            s = link[s]
            if s != -1:
                n = length[s]
        if s == -1:
            return MatchCursor(0, 0)
        return MatchCursor(nxt[s][token], n + 1)

    def advance_many(self, cursor: MatchCursor, tokens: Iterable[int]) -> MatchCursor:
        for t in tokens:
            cursor = self.advance(cursor, t)
        return cursor

    def draft_with_len(self, cursor: MatchCursor, k: int, min_match: int = 2) -> tuple[list[int], int]:
        """Draft up to ``k`` tokens and report the match length they extend.

        Under the ``recorded`` policy, when the representative occurrence of
        the cursor's match is the very end of the corpus (so nothing follows
        it), the match is shortened along suffix links until an occurrence
        with a continuation is found or the match drops below ``min_match``.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        n = cursor.match_len
        s = self._normalize(cursor.state, n)
        last_pos = len(self.corpus) - 1
        while n >= min_match and n > 0:
            e = self.end_pos[s]
            if e < last_pos:
                out = []
                for t in self.corpus[e + 1 : e + 1 + k]:
                    if t >= SENTINEL_BASE:
                        break
                    out.append(t)
                if out:
                    return out, n
                return [], 0
            if self.occurrence == LATEST:
                break
            s = self.link[s]
            if s <= 0:
                break
            n = self.length[s]
        return [], 0

    def draft(self, cursor: MatchCursor, k: int, min_match: int = 2) -> list[int]:
        return self.draft_with_len(cursor, k, min_match)[0]

    def count_accepted(self) -> int:
        """Number of distinct sequences accepted from the root, including the empty one."""
        order = sorted(range(self.num_states), key=self.length.__getitem__)
        paths = [0] * self.num_states
        paths[0] = 1
        for s in order:
            for t in self.next[s].values():
                paths[t] += paths[s]
        return sum(paths)


@dataclass
class Member:
    automaton: SuffixAutomaton
    weight: float
    cursor: MatchCursor = field(default_factory=MatchCursor)


class CompositeDraftSource:
    """Weighted ensemble of automata queried in parallel.

    Member 0 is always the live session automaton; every other member is a
    frozen automaton built from retrieved history with weight equal to its
    retrieval similarity.
    """

    def __init__(self, session: SuffixAutomaton, session_weight: float = 1.0) -> None:
        if session.frozen:
            raise ValueError("the session automaton must be live")
        self.members: list[Member] = [Member(session, session_weight)]

    @property
    def session(self) -> SuffixAutomaton:
        return self.members[0].automaton

    def add_frozen(self, automaton: SuffixAutomaton, weight: float, sync: Sequence[int] = ()) -> int:
        if not automaton.frozen:
            raise ValueError("cross-session members must be frozen")
        if weight < 0:
            raise ValueError("member weights must be non-negative")
        m = Member(automaton, weight)
        m.cursor = automaton.advance_many(m.cursor, sync)
        self.members.append(m)
        return len(self.members) - 1

    def sync(self, tokens: Iterable[int]) -> None:
        """Advance every cursor over ``tokens`` without indexing them."""
        tokens = list(tokens)
        for m in self.members:
            m.cursor = m.automaton.advance_many(m.cursor, tokens)

    def draft(self, k: int, min_match: int = 2) -> tuple[list[int], int | None]:
        """Return the best member's draft and that member's index.

        Candidates are ranked by ``weight * match_len``, then by longer match,
        then by lower member index. Returns ``([], None)`` if nobody drafts.
        """
        best: tuple[float, int, int] | None = None
        best_tokens: list[int] = []
        for i, m in enumerate(self.members):
            tokens, n = m.automaton.draft_with_len(m.cursor, k, min_match)
            if not tokens:
                continue
            key = (m.weight * n, n, -i)
            if best is None or key > best:
                best, best_tokens = key, tokens
        if best is None:
            return [], None
        return best_tokens, -best[2]

    def insert_verified(self, tokens: Sequence[int]) -> None:
        """Index newly committed tokens in the session automaton and resync cursors."""
        self.session.extend_many(tokens)
        self.sync(tokens)
