"""Full and light node state machines."""

from .base import AuthEvent, CommitEvent, Envelope, Identity, NoPeer, RefreshEvent
from .full import FullNode
from .light import LightNode, UnverifiableDelta, light_refresh
from .wire import decode_message, encode_message

__all__ = [
    "AuthEvent",
    "CommitEvent",
    "Envelope",
    "FullNode",
    "Identity",
    "LightNode",
    "NoPeer",
    "RefreshEvent",
    "UnverifiableDelta",
    "decode_message",
    "encode_message",
    "light_refresh",
]
