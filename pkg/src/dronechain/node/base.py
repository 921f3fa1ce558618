from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable

from ..auth import (
    AuthDecision,
    AuthReason,
    AuthResponse,
    Challenge,
    issue_challenge,
    respond,
    verify_response,
)
from ..chainfile import ChainConfig
from ..codec import DecodeError
from ..crypto import CountingProvider, KeyPair, Provider
from ..ledger import Block
from ..trust_graph import DEFAULT_GLOBAL_CAP, TrustGraph
from .wire import AuthChallenge, AuthReply, WireMessage, decode_message, encode_message


class NoPeer(Exception):
    pass


@dataclass(frozen=True)
class Envelope:
    to: bytes
    msg: WireMessage

    def encode(self) -> bytes:
        return encode_message(self.msg)


@dataclass(frozen=True)
class CommitEvent:
    height: int
    digest: bytes
    tx_ids: tuple[bytes, ...]
    time: int


@dataclass(frozen=True)
class AuthEvent:
    attempt_id: int
    target: bytes
    decision: AuthDecision
    issued_at: int
    time: int


@dataclass(frozen=True)
class RefreshEvent:
    ok: bool
    height: int
    time: int
    detail: str = ""


@dataclass
class Identity:
    name: str
    account: KeyPair
    auth: KeyPair
    behavior: str = "honest"


@dataclass
class NodeCounters:
    malformed: int = 0
    rejected_txs: int = 0
    invalid_proposals: int = 0
    extra: dict = field(default_factory=dict)


class BaseNode:
    """Message dispatch plus the responder/verifier halves of authentication."""

    role = ""

    def __init__(
        self,
        identity: Identity,
        config: ChainConfig,
        genesis: Block,
        provider: Provider,
        anchors: Iterable[bytes] = (),
        global_cap: int = DEFAULT_GLOBAL_CAP,
        auth_ttl: int = 5000,
        nonce_seed: int = 0,
    ):
        self.identity = identity
        self.config = config
        self.genesis = genesis
        self.provider = provider if isinstance(provider, CountingProvider) else CountingProvider(provider)
        self.anchors = tuple(anchors)
        self.global_cap = global_cap
        self.auth_ttl = auth_ttl
        self.rng = random.Random(nonce_seed)
        self.pending_auth: dict[int, Challenge] = {}
        self.events: list = []
        self.counters = NodeCounters()

    @property
    def key(self) -> bytes:
        return self.identity.account.public_key

    @property
    def validators(self) -> tuple[bytes, ...]:
        return self.config.validators

    def trust_view(self) -> TrustGraph:
        raise NotImplementedError

    def drain_events(self) -> list:
        events, self.events = self.events, []
        return events

    # -- transport ---------------------------------------------------------

    def receive(self, raw: bytes, sender: bytes, now: int) -> list[Envelope]:
        """Decode and handle; malformed input is counted and dropped."""
        try:
            msg = decode_message(raw)
        except (DecodeError, ValueError):
            self.counters.malformed += 1
            return []
        return self.handle_message(msg, sender, now)

    def handle_message(self, msg: WireMessage, sender: bytes, now: int) -> list[Envelope]:
        if isinstance(msg, AuthChallenge):
            return self._on_challenge(msg.challenge)
        if isinstance(msg, AuthReply):
            self._on_auth_reply(msg.response, now)
            return []
        return self._handle(msg, sender, now)

    def _handle(self, msg: WireMessage, sender: bytes, now: int) -> list[Envelope]:
        return []

    # -- authentication ----------------------------------------------------

    def start_auth(self, target: bytes, now: int, attempt_id: int) -> list[Envelope]:
        challenge = issue_challenge(self.key, target, now, self.rng, self.auth_ttl)
        self.pending_auth[attempt_id] = challenge
        return [Envelope(target, AuthChallenge(challenge))]

    def auth_timeout(self, attempt_id: int, now: int) -> bool:
        """Expire a still-pending attempt; returns whether it was pending."""
        challenge = self.pending_auth.pop(attempt_id, None)
        if challenge is None:
            return False
        decision = AuthDecision(False, AuthReason.EXPIRED)
        self.events.append(AuthEvent(attempt_id, challenge.target_account, decision, challenge.issued_at, now))
        return True

    def _on_challenge(self, challenge: Challenge) -> list[Envelope]:
        if challenge.target_account != self.key or self.identity.behavior == "silent":
            return []
        if self.identity.behavior == "wrong_key":
            response = respond(self.provider, challenge, self.identity.account)
        else:
            response = respond(self.provider, challenge, self.identity.auth)
        return [Envelope(challenge.verifier_account, AuthReply(response))]

    def _on_auth_reply(self, response: AuthResponse, now: int) -> None:
        match = [a for a, ch in self.pending_auth.items() if ch.nonce == response.challenge.nonce]
        if not match:
            return
        attempt_id = match[0]
        expected = self.pending_auth.pop(attempt_id)
        decision = verify_response(
            self.provider,
            response,
            self.trust_view(),
            self.anchors,
            now,
            self.global_cap,
            expected=expected,
        )
        self.events.append(AuthEvent(attempt_id, expected.target_account, decision, expected.issued_at, now))
