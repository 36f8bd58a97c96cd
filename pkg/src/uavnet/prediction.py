"""Movement prediction with a sparse second-order Markov chain.

States are displacement vectors per slot.  Training counts (prev, curr, next)
triples from quantized tracks; prediction evolves a state distribution by
touching only the stored nonzero transitions and decodes positions by MAP,
advancing the context pair with the hard decision each step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class StateSpace:
    """Ordered displacement alphabet; index 0 is the zero ("stay") state."""

    states: np.ndarray  # (K, 2) meters per slot
    step_length: float

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", states)
        if len(states) < 2:
            raise ValueError("need at least two movement states")
        if not np.any(np.all(states == 0.0, axis=1)):
            raise ValueError("state space must contain the zero displacement")
        if len(np.unique(states, axis=0)) != len(states):
            raise ValueError("state displacements must be pairwise distinct")

    @property
    def k(self) -> int:
        return len(self.states)

    @classmethod
    def compass(cls, step_length: float) -> "StateSpace":
        """Stay plus eight compass directions, counterclockwise from east."""
        d = np.sqrt(0.5)
        units = np.array(
            [
                [0.0, 0.0],
                [1.0, 0.0],
                [d, d],
                [0.0, 1.0],
                [-d, d],
                [-1.0, 0.0],
                [-d, -d],
                [0.0, -1.0],
                [d, -d],
            ]
        )
        return cls(states=step_length * units, step_length=step_length)


STAY_STATE = 0


@dataclass
class StateDistribution:
    """Probability vector over movement states."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < -_SUM_TOL):
            raise ValueError("state probabilities must be nonnegative")
        if abs(float(self.probs.sum()) - 1.0) > _SUM_TOL:
            raise ValueError("state probabilities must sum to one")

    @classmethod
    def one_hot(cls, k: int, index: int) -> "StateDistribution":
        probs = np.zeros(k)
        probs[index] = 1.0
        return cls(probs)


@dataclass
class TransitionTensor:
    """Sparse second-order transition probabilities Omega[(i, j, k)].

    Only observed triples are stored; absent entries are exactly zero.  Rows
    (i, j) with no observed outgoing transition are missing contexts and make
    prediction fall back to the stay state.
    """

    k: int
    entries: dict[tuple[int, int, int], float]
    counts: dict[tuple[int, int, int], int]
    _rows: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(
        default=None, repr=False
    )

    def __post_init__(self) -> None:
        if self._rows is None:
            rows: dict[tuple[int, int], tuple[list, list]] = {}
            for (i, j, kk), prob in self.entries.items():
                ks, ps = rows.setdefault((i, j), ([], []))
                ks.append(kk)
                ps.append(prob)
            self._rows = {
                ij: (np.array(ks, dtype=int), np.array(ps, dtype=float))
                for ij, (ks, ps) in rows.items()
            }
            for ij, (_, ps) in self._rows.items():
                if abs(float(ps.sum()) - 1.0) > _SUM_TOL:
                    raise ValueError(f"transition row {ij} does not sum to one")

    @property
    def nonzero_count(self) -> int:
        return len(self.entries)

    def has_context(self, prev: int, curr: int) -> bool:
        return (prev, curr) in self._rows

    def row(self, prev: int, curr: int):
        """(next-state indices, probabilities) or None for a missing context."""
        return self._rows.get((prev, curr))


def quantize_track(track, space: StateSpace) -> np.ndarray:
    """Map consecutive displacements to nearest-state indices (ties: lowest)."""
    positions = np.asarray(track.positions, dtype=float)
    if len(positions) < 3:
        raise ValueError("second-order quantization needs at least 3 positions")
    moves = np.diff(positions, axis=0)  # (L-1, 2)
    d2 = ((moves[:, None, :] - space.states[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def fit_tensor(state_seqs: list[np.ndarray], k: int) -> TransitionTensor:
    """Count (s_{t-2}, s_{t-1}, s_t) triples and normalize each (i, j) row."""
    counts: dict[tuple[int, int, int], int] = {}
    for seq in state_seqs:
        seq = np.asarray(seq, dtype=int)
        if len(seq) < 3:
            raise ValueError("each state sequence must contain at least 3 states")
        if seq.max() >= k or seq.min() < 0:
            raise ValueError(f"state index {int(seq.max())} outside 0..{k - 1}")
        for i, j, kk in zip(seq[:-2], seq[1:-1], seq[2:]):
            key = (int(i), int(j), int(kk))
            counts[key] = counts.get(key, 0) + 1

    row_totals: dict[tuple[int, int], int] = {}
    for (i, j, _), c in counts.items():
        row_totals[(i, j)] = row_totals.get((i, j), 0) + c
    entries = {
        (i, j, kk): c / row_totals[(i, j)] for (i, j, kk), c in counts.items()
    }
    return TransitionTensor(k=k, entries=entries, counts=counts)


@dataclass
class EvolveResult:
    dist: StateDistribution
    fallback: bool
    ops: int  # nonzero tensor entries touched


def evolve(
    dist: StateDistribution,
    prev_state: int,
    tensor: TransitionTensor,
    stay_index: int = STAY_STATE,
) -> EvolveResult:
    """One chain step conditioned on the decoded previous state.

    out[k] = sum_j dist[j] * Omega[prev_state, j, k], touching only stored
    nonzeros; an all-zero result (missing contexts) falls back to a one-hot
    stay distribution and is flagged.
    """
    k = tensor.k
    out = np.zeros(k)
    ops = 0
    for j in np.nonzero(dist.probs)[0]:
        row = tensor.row(prev_state, int(j))
        if row is None:
            continue
        ks, ps = row
        out[ks] += dist.probs[j] * ps
        ops += len(ks)
    total = float(out.sum())
    if total <= 0.0:
        return EvolveResult(StateDistribution.one_hot(k, stay_index), True, ops)
    return EvolveResult(StateDistribution(out / total), False, ops)


def decode_map(dist: StateDistribution) -> int:
    """MAP state; ties resolve to the lowest index."""
    return int(np.argmax(dist.probs))


@dataclass
class PredictedTrack:
    user_id: int
    positions: np.ndarray  # (horizon + 1, 2)
    decoded_states: np.ndarray  # (horizon,)
    fallback_slots: list[int]


def predict_locations(
    initial_pos: np.ndarray,
    last_two_states: tuple[int, int],
    tensor: TransitionTensor,
    space: StateSpace,
    horizon: int,
    bounds: tuple[tuple[float, float], tuple[float, float]] | None = None,
    user_id: int = 0,
) -> PredictedTrack:
    """Roll the chain forward, moving by the decoded displacement each slot."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    prev, curr = int(last_two_states[0]), int(last_two_states[1])
    pos = np.asarray(initial_pos, dtype=float).copy()
    positions = [pos.copy()]
    decoded = []
    fallback_slots: list[int] = []
    dist = StateDistribution.one_hot(tensor.k, curr)
    for step in range(horizon):
        result = evolve(dist, prev, tensor)
        if result.fallback:
            fallback_slots.append(step)
        state = decode_map(result.dist)
        pos = pos + space.states[state]
        if bounds is not None:
            pos[0] = np.clip(pos[0], bounds[0][0], bounds[0][1])
            pos[1] = np.clip(pos[1], bounds[1][0], bounds[1][1])
        positions.append(pos.copy())
        decoded.append(state)
        prev, curr = curr, state
        dist = StateDistribution.one_hot(tensor.k, state)
    return PredictedTrack(
        user_id=user_id,
        positions=np.array(positions),
        decoded_states=np.array(decoded, dtype=int),
        fallback_slots=fallback_slots,
    )


def save_tensor(tensor: TransitionTensor, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prev", "curr", "next", "prob"])
        for (i, j, kk) in sorted(tensor.entries):
            writer.writerow([i, j, kk, f"{tensor.entries[(i, j, kk)]:.17g}"])


def load_tensor(path, k: int | None = None) -> TransitionTensor:
    """Rebuild a tensor from its triple dump; counts are not recoverable."""
    entries: dict[tuple[int, int, int], float] = {}
    max_index = -1
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = (int(row["prev"]), int(row["curr"]), int(row["next"]))
            entries[key] = float(row["prob"])
            max_index = max(max_index, *key)
    if k is None:
        k = max_index + 1
    if max_index >= k:
        raise ValueError(f"state index {max_index} outside 0..{k - 1}")
    return TransitionTensor(k=k, entries=entries, counts={})
