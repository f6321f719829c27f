"""Random-to-random shuffle coupled through card positions.

Both decks remove the same card.  It goes back into deck A at a uniform
position; in deck B it goes on top if it went on top of A, and otherwise
directly below the card that sits above it in A.  The distance between the
decks is the minimal number of adjacent transpositions (Kendall tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfglauber.glauber import as_rng


def _merge_count(seq: list) -> tuple[list, int]:
    if len(seq) <= 1:
        return seq, 0
    mid = len(seq) // 2
    left, a = _merge_count(seq[:mid])
    right, b = _merge_count(seq[mid:])
    out, inv, i, j = [], a + b, 0, 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            out.append(left[i])
            i += 1
        else:
            out.append(right[j])
            inv += len(left) - i
            j += 1
    out.extend(left[i:])
    out.extend(right[j:])
    return out, inv


def lace_distance(deck_a, deck_b) -> int:
    """Minimal adjacent-transposition distance between two orderings."""
    deck_a, deck_b = list(deck_a), list(deck_b)
    if sorted(deck_a) != sorted(deck_b) or len(set(deck_a)) != len(deck_a):
        raise ValueError("decks must be permutations of the same cards")
    pos_b = {card: k for k, card in enumerate(deck_b)}
    return _merge_count([pos_b[c] for c in deck_a])[1]


def lace_crossings(deck_a, deck_b) -> dict:
    """Number of crossings each card's lace takes part in."""
    pos_b = {card: k for k, card in enumerate(deck_b)}
    seq = [pos_b[c] for c in deck_a]
    n = len(seq)
    out = {c: 0 for c in deck_a}
    for i in range(n):
        for j in range(i + 1, n):
            if seq[i] > seq[j]:
                out[deck_a[i]] += 1
                out[deck_a[j]] += 1
    return out


@dataclass(frozen=True)
class ShuffleState:
    deck_a: tuple
    deck_b: tuple

    def __post_init__(self):
        object.__setattr__(self, "deck_a", tuple(self.deck_a))
        object.__setattr__(self, "deck_b", tuple(self.deck_b))
        if sorted(self.deck_a) != sorted(self.deck_b):
            raise ValueError("decks must hold the same cards")

    @property
    def n(self) -> int:
        return len(self.deck_a)

    @property
    def crossings(self) -> int:
        return lace_distance(self.deck_a, self.deck_b)

    @property
    def coupled(self) -> bool:
        return self.deck_a == self.deck_b


def apply_move(state: ShuffleState, card, position: int) -> ShuffleState:
    """Move ``card`` to index ``position`` (0 = top) of deck A and couple deck B."""
    a = [c for c in state.deck_a if c != card]
    b = [c for c in state.deck_b if c != card]
    if not 0 <= position <= len(a):
        raise ValueError("position out of range")
    a.insert(position, card)
    if position == 0:
        b.insert(0, card)
    else:
        above = a[position - 1]
        b.insert(b.index(above) + 1, card)
    return ShuffleState(tuple(a), tuple(b))


def shuffle_step(state: ShuffleState, seed) -> ShuffleState:
    rng = as_rng(seed)
    card = state.deck_a[rng.integers(state.n)]
    return apply_move(state, card, int(rng.integers(state.n)))


def one_step_outcomes(state: ShuffleState) -> list:
    """All n^2 equally likely (card, position) moves and their next states."""
    return [((c, p), apply_move(state, c, p)) for c in state.deck_a for p in range(state.n)]


def expected_next_distance(state: ShuffleState) -> float:
    outs = one_step_outcomes(state)
    return float(np.mean([s.crossings for _, s in outs]))


def sample_next_distances(state: ShuffleState, trials: int, seed) -> np.ndarray:
    """Distances after one coupled step, for ``trials`` independent draws.

    The next state depends only on the drawn (card, position) pair, so the
    outcome for each pair is computed once and looked up afterwards.
    """
    rng = as_rng(seed)
    n = state.n
    cards = rng.integers(n, size=trials)
    pos = rng.integers(n, size=trials)
    table = np.empty((n, n), dtype=np.int64)
    for ci, c in enumerate(state.deck_a):
        for p in range(n):
            table[ci, p] = apply_move(state, c, p).crossings
    return table[cards, pos]


def random_state_with_distance(n: int, d: int, seed, tries: int = 100_000) -> ShuffleState:
    """A deck pair at lace distance exactly ``d`` (deck A in identity order)."""
    rng = as_rng(seed)
    if not 0 <= d <= n * (n - 1) // 2:
        raise ValueError("distance out of range")
    a = tuple(range(1, n + 1))
    # walk by adjacent swaps that add an inversion
    b = list(a)
    for _ in range(tries):
        cur = lace_distance(a, b)
        if cur == d:
            return ShuffleState(a, tuple(b))
        k = int(rng.integers(n - 1))
        if b[k] < b[k + 1]:
            b[k], b[k + 1] = b[k + 1], b[k]
    raise RuntimeError("could not reach the requested distance")


def shuffle_coupling_times(n: int, seed, replicas: int = 200, max_steps: int = 100_000,
                           start: ShuffleState | None = None):
    """Coupling times of the paired shuffle; start defaults to reversed decks."""
    rng = as_rng(seed)
    if start is None:
        start = ShuffleState(tuple(range(1, n + 1)), tuple(range(n, 0, -1)))
    taus = np.full(replicas, max_steps, dtype=np.int64)
    censored = np.ones(replicas, dtype=bool)
    for r in range(replicas):
        s = start
        for t in range(max_steps + 1):
            if s.coupled:
                taus[r] = t
                censored[r] = False
                break
            if t == max_steps:
                break
            s = apply_move(s, s.deck_a[rng.integers(n)], int(rng.integers(n)))
    return taus, censored
