"""Canonical serialization and deterministic seed derivation helpers."""

from __future__ import annotations

import hashlib
import json


def canonical_json(obj) -> str:
    """Serialize with sorted keys and no whitespace, for digests and logs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def derive_seed(*parts) -> int:
    """Fold arbitrary labels into a 64-bit seed, stable across processes."""
    material = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(material.encode("utf-8")).digest()[:8], "big")
