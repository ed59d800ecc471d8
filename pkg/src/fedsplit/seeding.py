"""Deterministic 64-bit seed derivation.

Every random stream in the project (model init, replay sampling, action
selection, per-epoch environment resets) gets its own seed derived from the
run seed and a string label, so that runs are reproducible and sub-streams
are independent of each other.

The mix function is SplitMix64: the run seed is the initial state, each
label byte is XORed in and the state advanced once, and one final
advance produces the output.  SplitMix64 is a fixed, documented bijection
(Steele et al.'s java.util.SplittableRandom finalizer), so two labels that
differ in any byte yield unrelated seeds.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 step: advance state ``x`` and return the mixed output."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(run_seed: int, label: str) -> int:
    """Derive the 64-bit seed for the sub-stream named ``label``."""
    x = run_seed & _MASK64
    for byte in label.encode("utf-8"):
        x = splitmix64(x ^ byte)
    return splitmix64(x)
