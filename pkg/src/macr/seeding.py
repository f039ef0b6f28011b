"""Seed derivation.

Every seed in a run comes from one master seed through a SHA-256 chain::

    derive_seed(master, *path) = int(sha256("master/part1/part2/..."))[:8 bytes]

so fold splits, clustering and request nonces are independent streams that
all reproduce from the master seed alone.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *path) -> int:
    key = "/".join([str(int(master)), *map(str, path)])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
