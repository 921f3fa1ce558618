"""Signature and hashing providers.

Two interchangeable providers share one interface:

* ``ed-curve``: Ed25519 signatures with SHA-256 digests.
* ``mock``: hash-based stand-in, deterministic and fast, meant for fuzzing
  and large simulations. It offers no security: the signing secret is
  derivable from the public key.

Providers are stateless. Every key is derived from an explicit 32-byte seed.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DIGEST_SIZE = 32
SEED_SIZE = 32


class CryptoError(ValueError):
    """Raised for malformed keys or seeds."""


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()[:16]}...)"


class Provider:
    """Common interface; subclasses fill in the primitives."""

    name: str = ""

    def hash(self, data: bytes) -> bytes:
        raise NotImplementedError

    def generate_keypair(self, seed: bytes) -> KeyPair:
        raise NotImplementedError

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


def _check_seed(seed: bytes) -> bytes:
    seed = bytes(seed)
    if len(seed) != SEED_SIZE:
        raise CryptoError(f"seed must be {SEED_SIZE} bytes, got {len(seed)}")
    return seed


@lru_cache(maxsize=65536)
def _ed25519_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    # Memoized: verification is a pure function and chain audits re-check the
    # same certificates many times.
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class EdCurveProvider(Provider):
    name = "ed-curve"

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    def generate_keypair(self, seed: bytes) -> KeyPair:
        seed = _check_seed(seed)
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return KeyPair(public_key=pk, private_key=seed)

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        try:
            sk = Ed25519PrivateKey.from_private_bytes(bytes(private_key))
        except ValueError as exc:
            raise CryptoError(f"malformed private key: {exc}") from None
        return sk.sign(bytes(message))

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != 32 or len(signature) != 64:
            return False
        return _ed25519_verify(bytes(public_key), bytes(message), bytes(signature))


class MockProvider(Provider):
    """signature = H(secret || message), with the secret re-derivable from the public key."""

    name = "mock"

    def hash(self, data: bytes) -> bytes:
        return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()

    def _secret(self, public_key: bytes) -> bytes:
        return self.hash(b"mock-secret" + public_key)

    def generate_keypair(self, seed: bytes) -> KeyPair:
        seed = _check_seed(seed)
        pk = self.hash(b"mock-public" + seed)
        return KeyPair(public_key=pk, private_key=self._secret(pk))

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        if len(private_key) != DIGEST_SIZE:
            raise CryptoError("malformed private key")
        return self.hash(bytes(private_key) + bytes(message))

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != DIGEST_SIZE or len(signature) != DIGEST_SIZE:
            return False
        return self.hash(self._secret(bytes(public_key)) + bytes(message)) == signature


PROVIDERS: dict[str, type[Provider]] = {
    EdCurveProvider.name: EdCurveProvider,
    MockProvider.name: MockProvider,
}

PROVIDER_ENV_VAR = "DRONECHAIN_PROVIDER"


def get_provider(name: str | None = None) -> Provider:
    """Look up a provider by name; ``None`` falls back to the env var, then ed-curve."""
    if name is None:
        name = os.environ.get(PROVIDER_ENV_VAR, EdCurveProvider.name)
    try:
        return PROVIDERS[name]()
    except KeyError:
        raise CryptoError(f"unknown crypto provider {name!r}") from None


class CountingProvider(Provider):
    """Wraps a provider and tallies operations (used as energy proxies)."""

    def __init__(self, inner: Provider):
        self.inner = inner
        self.name = inner.name
        self.hashes = 0
        self.signatures_created = 0
        self.signatures_verified = 0

    def hash(self, data: bytes) -> bytes:
        self.hashes += 1
        return self.inner.hash(data)

    def generate_keypair(self, seed: bytes) -> KeyPair:
        return self.inner.generate_keypair(seed)

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        self.signatures_created += 1
        return self.inner.sign(private_key, message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        self.signatures_verified += 1
        return self.inner.verify(public_key, message, signature)


def derive_seed(*parts: bytes | str | int) -> bytes:
    """Deterministically derive a 32-byte seed from labelled parts."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            part = part.encode()
        elif isinstance(part, int):
            part = part.to_bytes(8, "big", signed=False)
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.digest()
