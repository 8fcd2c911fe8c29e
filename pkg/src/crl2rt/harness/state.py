"""Delay-embedded state vector: 8 past (angle, action) pairs then 4 commanded angle vectors."""

from __future__ import annotations

import numpy as np

__all__ = ["HISTORY", "HORIZON", "PREV_ACTION", "STATE_LEN", "StateBuilder", "build_state"]

HISTORY = 8  # M + 1 pairs with M = 7
HORIZON = 4  # H + 1 command vectors with H = 3
N_WINGS = 4
PAIR = 2 * N_WINGS
STATE_LEN = HISTORY * PAIR + HORIZON * N_WINGS
# Newest action slot: the action applied on the previous step.
PREV_ACTION = slice(HISTORY * PAIR - N_WINGS, HISTORY * PAIR)


def build_state(history, window) -> np.ndarray:
    """Assemble the 80-entry state.

    ``history`` is a sequence of ``(observation, action)`` pairs, oldest
    first; only the newest eight are used and missing older slots are
    zero. ``window`` holds the commanded angles for the current and next
    three steps as a ``(4, 4)`` array (time-major).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (HORIZON, N_WINGS):
        raise ValueError(f"command window must have shape ({HORIZON}, {N_WINGS}), got {window.shape}")
    out = np.zeros(STATE_LEN, np.float32)
    pairs = list(history)[-HISTORY:]
    first = HISTORY - len(pairs)
    for i, (o, a) in enumerate(pairs):
        base = (first + i) * PAIR
        out[base : base + N_WINGS] = o
        out[base + N_WINGS : base + PAIR] = a
    out[HISTORY * PAIR :] = window.ravel()
    return out


class StateBuilder:
    """Incremental version of :func:`build_state` backed by one float32 buffer."""

    def __init__(self):
        self.buffer = np.zeros(STATE_LEN, np.float32)
        self.depth = 0

    def reset(self) -> None:
        self.buffer[:] = 0.0
        self.depth = 0

    def push(self, observation, action) -> None:
        hist = self.buffer[: HISTORY * PAIR]
        hist[:-PAIR] = hist[PAIR:].copy()
        hist[-PAIR:-N_WINGS] = observation
        hist[-N_WINGS:] = action
        self.depth = min(self.depth + 1, HISTORY)

    def state(self, window) -> np.ndarray:
        """Write the command window and return the live buffer (not a copy)."""
        self.buffer[HISTORY * PAIR :] = np.asarray(window).ravel()
        return self.buffer
