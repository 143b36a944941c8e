"""Root-seed fan-out.

Every random stream in the package is derived from a single root seed plus a
purpose label (and optional integer keys), so each component can be re-run in
isolation and still draw the same numbers:

    SeedSequence([root, crc32(purpose), *keys])

Purposes used: ``"transform"``, ``"split"``, ``"ripple"`` (keyed by user id),
``"init"``, ``"shuffle"`` (keyed by epoch), ``"triples"``, ``"overlap"``,
``"synthetic"``.
"""

from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(root: int, purpose: str, *keys: int) -> np.random.SeedSequence:
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.SeedSequence([int(root), tag, *(int(k) for k in keys)])


def derive_rng(root: int, purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, purpose, *keys))


def derive_seed(root: int, purpose: str, *keys: int) -> int:
    return int(seed_sequence(root, purpose, *keys).generate_state(1, dtype=np.uint32)[0])
