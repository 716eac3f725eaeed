"""Canonical serialization helpers shared across modules."""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace so equal objects
    produce byte-identical text."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_canonical(path: str, obj: Any) -> str:
    text = canonical_json(obj) + "\n"
    with open(path, "w") as f:
        f.write(text)
    return text
