"""Seeds, random streams and content hashes.

Every random draw in sdprune goes through a numpy ``Generator`` backed by the
counter-based Philox bit generator, so equal seeds give equal streams on every
platform. Components never share a generator: they derive their own seed from
the master seed with a label.
"""
import hashlib
import json
from typing import Any

import numpy as np

SEED_LABELS = ("data", "init", "shuffle", "bezier", "prox")


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed``; extra integers select an independent sub-stream."""
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def canonical_json_bytes(payload: Any) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json_bytes(payload)).hexdigest()[:16]
