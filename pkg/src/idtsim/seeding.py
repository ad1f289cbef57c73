"""Named sub-seeds derived from one master seed."""
import hashlib

import numpy as np


def sub_seed(master, *names):
    """Stable 64-bit seed for ``names`` under ``master`` (no ambient entropy)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for name in names:
        h.update(b"\x00")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def rng(master, *names):
    return np.random.Generator(np.random.PCG64(sub_seed(master, *names)))
