"""Newline-delimited JSON messages exchanged between coordinator and workers.

Every message is one line::

    {"payload": {...}, "round": 1, "schema_version": 1, "type": "moment_summary"}

Keys are sorted and floats use Python's shortest round-trip repr, so a
message decodes to bit-identical numbers.  Message types:

=================  =====  ==========================================
type               round  payload
=================  =====  ==========================================
assign             1      {"partitions": [{"path", "kind"}, ...]}
moments_request    1      {}
moment_summary     1      MomentSummary
carrier            2      {"gamma", "beta", "m"}
lp_summary         2      LPSummary
threshold          2      {"method", "rule", "model"}
decision           2      {"method", "id", "decision"}
done               any    {"count"}
error              any    {"message"}
shutdown           any    {}
=================  =====  ==========================================
"""

from __future__ import annotations

import json
from typing import Any

SCHEMA_VERSION = 1

ROUND_OF = {
    "assign": 1,
    "moments_request": 1,
    "moment_summary": 1,
    "carrier": 2,
    "lp_summary": 2,
    "threshold": 2,
    "decision": 2,
}


class WireError(ValueError):
    pass


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(kind: str, payload: dict, round: int | None = None) -> str:
    msg = {
        "schema_version": SCHEMA_VERSION,
        "round": ROUND_OF.get(kind, 0) if round is None else round,
        "type": kind,
        "payload": payload,
    }
    return dumps(msg) + "\n"


def decode(line: str | bytes) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"malformed message: {exc}") from None
    if not isinstance(msg, dict) or msg.get("schema_version") != SCHEMA_VERSION:
        raise WireError(f"unsupported message: {line[:80]!r}")
    for key in ("type", "payload", "round"):
        if key not in msg:
            raise WireError(f"message lacks {key!r}")
    return msg
