"""Counter-based per-trial random streams.

A trial's stream is Philox4x64-10 keyed by the 128-bit pair
``(seed, fnv1a64(scenario_id))`` with the 256-bit starting counter
``(0, 0, trial, sweep)`` (words in numpy's order, lowest first). Draws advance
only the two low words, so streams for distinct ``(sweep, trial)`` never
overlap. The counter is incremented before each block is generated, so the
first four 64-bit outputs are Philox4x64-10 of ``(1, 0, trial, sweep)``. ``stream_id = (sweep << 32) | trial`` is written next to each record.
"""
import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


def fnv1a64(text):
    """64-bit FNV-1a of the UTF-8 bytes of ``text``."""
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def stream_id(sweep, trial):
    if not (0 <= sweep < 2**32 and 0 <= trial < 2**32):
        raise ValueError("sweep and trial indices must fit in 32 bits")
    return (int(sweep) << 32) | int(trial)


def trial_bitgen(seed, scenario_id, sweep, trial):
    key = np.array([int(seed) & MASK64, fnv1a64(scenario_id)], dtype=np.uint64)
    counter = np.array([0, 0, int(trial), int(sweep)], dtype=np.uint64)
    return np.random.Philox(key=key, counter=counter)


def trial_stream(seed, scenario_id, sweep, trial):
    """Generator for one ``(sweep, trial)`` cell of a scenario."""
    return np.random.Generator(trial_bitgen(seed, scenario_id, sweep, trial))
