"""Nonce challenge-response bound to the trust graph's identity-key bindings."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

from .codec import Reader, Writer
from .crypto import KeyPair, Provider
from .trust_graph import DEFAULT_GLOBAL_CAP, TrustGraph, evaluate_trust

DEFAULT_TTL_MS = 5000
NONCE_SIZE = 32
_DOMAIN = b"dronechain-auth-v1"


@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    verifier_account: bytes
    target_account: bytes
    issued_at: int
    ttl: int = DEFAULT_TTL_MS

    def __post_init__(self) -> None:
        if self.ttl <= 0:
            raise ValueError("ttl must be positive")
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError(f"nonce must be {NONCE_SIZE} bytes")

    @property
    def expires_at(self) -> int:
        return self.issued_at + self.ttl

    def signing_bytes(self) -> bytes:
        return (
            Writer()
            .bytes(_DOMAIN)
            .bytes(self.nonce)
            .bytes(self.verifier_account)
            .bytes(self.target_account)
            .getvalue()
        )

    def write(self, w: Writer) -> None:
        w.bytes(self.nonce).bytes(self.verifier_account).bytes(self.target_account)
        w.u64(self.issued_at).u64(self.ttl)

    @classmethod
    def read(cls, r: Reader) -> "Challenge":
        return cls(r.bytes(), r.bytes(), r.bytes(), r.u64(), r.u64())


@dataclass(frozen=True)
class AuthResponse:
    challenge: Challenge
    responder_auth_sig: bytes

    def write(self, w: Writer) -> None:
        self.challenge.write(w)
        w.bytes(self.responder_auth_sig)

    @classmethod
    def read(cls, r: Reader) -> "AuthResponse":
        return cls(Challenge.read(r), r.bytes())


class AuthReason(str, enum.Enum):
    OK = "Ok"
    UNTRUSTED = "Untrusted"
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    WRONG_TARGET = "WrongTarget"


@dataclass(frozen=True)
class AuthDecision:
    accepted: bool
    reason: AuthReason
    trust_witness: tuple[bytes, ...] | None = None


def issue_challenge(
    verifier: bytes,
    target: bytes,
    now: int,
    rng: random.Random | int,
    ttl: int = DEFAULT_TTL_MS,
) -> Challenge:
    """Draw a fresh nonce from ``rng`` (an int seeds a private generator)."""
    if isinstance(rng, int):
        rng = random.Random(rng)
    return Challenge(rng.randbytes(NONCE_SIZE), verifier, target, now, ttl)


def respond(provider: Provider, challenge: Challenge, auth_keypair: KeyPair) -> AuthResponse:
    sig = provider.sign(auth_keypair.private_key, challenge.signing_bytes())
    return AuthResponse(challenge, sig)


def verify_response(
    provider: Provider,
    response: AuthResponse,
    trust_view: TrustGraph,
    anchors,
    now: int,
    global_cap: int = DEFAULT_GLOBAL_CAP,
    expected: Challenge | None = None,
) -> AuthDecision:
    """Decide a response; checks run expiry, trust, then signature.

    When the verifier passes its own ``expected`` challenge, timing comes from
    it rather than the echoed copy, and a re-targeted echo is a WrongTarget.
    """
    ch = response.challenge
    if expected is not None:
        if (ch.verifier_account, ch.target_account) != (
            expected.verifier_account,
            expected.target_account,
        ):
            return AuthDecision(False, AuthReason.WRONG_TARGET)
        timing = expected
    else:
        timing = ch
    if now > timing.expires_at:
        return AuthDecision(False, AuthReason.EXPIRED)
    anchors = set(anchors)
    trust = evaluate_trust(trust_view, anchors, ch.target_account, global_cap) if anchors else None
    if trust is None or not trust.trusted:
        return AuthDecision(False, AuthReason.UNTRUSTED)
    record = trust_view.nodes.get(ch.target_account)
    if (
        record is None
        or (expected is not None and ch.nonce != expected.nonce)
        or not response.responder_auth_sig
        or not provider.verify(record.auth_public_key, ch.signing_bytes(), response.responder_auth_sig)
    ):
        return AuthDecision(False, AuthReason.BAD_SIGNATURE)
    return AuthDecision(True, AuthReason.OK, trust.witness_path)
