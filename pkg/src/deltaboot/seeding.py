"""Seed derivation.

Every random stream is a Philox-4x64-10 counter-based generator keyed by
``SeedSequence([seed, tag, *extra])``.  The tag separates components, so for
example weight initialization and bootstrap resampling never share a stream
even when they are given the same seed.
"""
import numpy as np

PRNG_NAME = "Philox4x64-10"
#: Bump when the derivation below changes in a way that alters any stream.
PRNG_VERSION = 1

TAG_INIT = 1
TAG_RESAMPLE = 2
TAG_LANCZOS = 3
TAG_DATA = 4


def make_rng(seed, tag, *extra):
    if seed < 0:
        raise ValueError("seeds must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), tag, *map(int, extra)])))


def prng_description():
    return {"generator": PRNG_NAME, "derivation_version": PRNG_VERSION, "numpy": np.__version__}


#: Component codes for :func:`derive_seed`.
COMPONENT_BOOTSTRAP_INIT = 11
COMPONENT_DELTA_INIT = 12


def derive_seed(base_seed, component):
    """Deterministic 63-bit seed for one pipeline component."""
    state = np.random.SeedSequence([int(base_seed), component]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))
