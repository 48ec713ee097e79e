"""Protocol vocabulary and its JSON codec.

Site-to-server traffic is restricted by construction to Register and
DiscrepancyReply; every matrix-valued payload flows server-to-site only.
The privacy audit greps a persisted message log for exactly this property.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ProtocolError


@dataclass(frozen=True)
class Register:
    site_id: int
    n_rows: int


@dataclass(frozen=True)
class CandidateBatch:
    round_id: int
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))


@dataclass(frozen=True)
class DiscrepancyReply:
    round_id: int
    site_id: int
    phi: float


@dataclass(frozen=True)
class AcceptNotice:
    round_id: int
    accepted: bool


@dataclass(frozen=True)
class SampleDelivery:
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))


@dataclass(frozen=True)
class Shutdown:
    pass


WireMessage = Union[Register, CandidateBatch, DiscrepancyReply, AcceptNotice, SampleDelivery, Shutdown]


def encode_message(msg: WireMessage) -> dict:
    if isinstance(msg, Register):
        return {"type": "register", "site_id": msg.site_id, "n_rows": msg.n_rows}
    if isinstance(msg, CandidateBatch):
        return {"type": "candidate_batch", "round_id": msg.round_id, "data": msg.data.tolist()}
    if isinstance(msg, DiscrepancyReply):
        return {
            "type": "discrepancy_reply",
            "round_id": msg.round_id,
            "site_id": msg.site_id,
            "phi": msg.phi,
        }
    if isinstance(msg, AcceptNotice):
        return {"type": "accept_notice", "round_id": msg.round_id, "accepted": msg.accepted}
    if isinstance(msg, SampleDelivery):
        return {"type": "sample_delivery", "data": msg.data.tolist()}
    if isinstance(msg, Shutdown):
        return {"type": "shutdown"}
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def decode_message(doc: dict) -> WireMessage:
    if not isinstance(doc, dict) or "type" not in doc:
        raise ProtocolError("message must be an object with a type field")
    kind = doc["type"]
    try:
        if kind == "register":
            return Register(site_id=int(doc["site_id"]), n_rows=int(doc["n_rows"]))
        if kind == "candidate_batch":
            return CandidateBatch(round_id=int(doc["round_id"]), data=np.asarray(doc["data"], dtype=float))
        if kind == "discrepancy_reply":
            phi = float(doc["phi"])
            if not math.isfinite(phi) or phi < 0:
                raise ProtocolError(f"phi must be finite and nonnegative, got {phi}")
            return DiscrepancyReply(round_id=int(doc["round_id"]), site_id=int(doc["site_id"]), phi=phi)
        if kind == "accept_notice":
            return AcceptNotice(round_id=int(doc["round_id"]), accepted=bool(doc["accepted"]))
        if kind == "sample_delivery":
            return SampleDelivery(data=np.asarray(doc["data"], dtype=float))
        if kind == "shutdown":
            return Shutdown()
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed {kind} message: {exc}") from exc
    raise ProtocolError(f"unknown message type {kind!r}")


def message_to_bytes(msg: WireMessage) -> bytes:
    return json.dumps(encode_message(msg)).encode("utf-8")


def message_from_bytes(payload: bytes) -> WireMessage:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable message body: {exc}") from exc
    return decode_message(doc)
