"""Transactions, block headers, blocks and transaction-inclusion proofs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import ClassVar, Iterable, Sequence, Union

from .codec import DecodeError, Reader, Writer
from .crypto import DIGEST_SIZE, KeyPair, Provider

ZERO_DIGEST = bytes(DIGEST_SIZE)
MAX_TXS_PER_BLOCK = 100_000


class EntityType(enum.IntEnum):
    DRONE = 0
    GROUND_STATION = 1
    OTHER = 2


# --- payloads -------------------------------------------------------------


@dataclass(frozen=True)
class Coinbase:
    TAG: ClassVar[int] = 1
    recipient: bytes
    amount: int

    def encode(self, w: Writer) -> None:
        w.bytes(self.recipient).u64(self.amount)

    @classmethod
    def decode(cls, r: Reader) -> "Coinbase":
        return cls(r.bytes(), r.u64())


@dataclass(frozen=True)
class TokenTransfer:
    TAG: ClassVar[int] = 2
    recipient: bytes
    amount: int

    def encode(self, w: Writer) -> None:
        w.bytes(self.recipient).u64(self.amount)

    @classmethod
    def decode(cls, r: Reader) -> "TokenTransfer":
        return cls(r.bytes(), r.u64())


@dataclass(frozen=True)
class Entity:
    TAG: ClassVar[int] = 3
    identity_name: str
    entity_type: EntityType
    auth_public_key: bytes
    possession_sig: bytes

    def encode(self, w: Writer) -> None:
        w.str(self.identity_name).u8(int(self.entity_type))
        w.bytes(self.auth_public_key).bytes(self.possession_sig)

    @classmethod
    def decode(cls, r: Reader) -> "Entity":
        name = r.str()
        raw_type = r.u8()
        try:
            etype = EntityType(raw_type)
        except ValueError:
            raise DecodeError(f"unknown entity type {raw_type}") from None
        return cls(name, etype, r.bytes(), r.bytes())


@dataclass(frozen=True)
class RevokeEntity:
    TAG: ClassVar[int] = 4

    def encode(self, w: Writer) -> None:
        pass

    @classmethod
    def decode(cls, r: Reader) -> "RevokeEntity":
        return cls()


@dataclass(frozen=True)
class Confirmation:
    TAG: ClassVar[int] = 5
    subject: bytes
    max_path_len: int

    def __post_init__(self) -> None:
        if not 1 <= self.max_path_len <= 255:
            raise ValueError(f"max_path_len must be in [1, 255], got {self.max_path_len}")

    def encode(self, w: Writer) -> None:
        w.bytes(self.subject).u8(self.max_path_len)

    @classmethod
    def decode(cls, r: Reader) -> "Confirmation":
        subject = r.bytes()
        limit = r.u8()
        if limit == 0:
            raise DecodeError("max_path_len of 0 is not allowed")
        return cls(subject, limit)


@dataclass(frozen=True)
class Revocation:
    TAG: ClassVar[int] = 6
    subject: bytes

    def encode(self, w: Writer) -> None:
        w.bytes(self.subject)

    @classmethod
    def decode(cls, r: Reader) -> "Revocation":
        return cls(r.bytes())


Payload = Union[Coinbase, TokenTransfer, Entity, RevokeEntity, Confirmation, Revocation]
PAYLOAD_TYPES: dict[int, type] = {
    cls.TAG: cls
    for cls in (Coinbase, TokenTransfer, Entity, RevokeEntity, Confirmation, Revocation)
}


# --- transactions ---------------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    """A signed, fee-bearing state change.

    ``sender`` is empty for coinbase transactions, which carry the block
    height in ``seq`` so that their ids differ across blocks.
    """

    sender: bytes
    seq: int
    fee: int
    payload: Payload
    signature: bytes = b""
    _ids: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    @property
    def tx_type(self) -> int:
        return self.payload.TAG

    @property
    def is_coinbase(self) -> bool:
        return isinstance(self.payload, Coinbase)

    def signing_bytes(self) -> bytes:
        # Cached next to the ids; the fields are frozen so this never goes stale.
        cached = self._ids.get(b"")
        if cached is None:
            w = Writer()
            w.u8(self.tx_type).bytes(self.sender).u64(self.seq).u64(self.fee)
            self.payload.encode(w)
            cached = self._ids[b""] = w.getvalue()
        return cached

    def id(self, provider: Provider) -> bytes:
        cached = self._ids.get(provider.name)
        if cached is None:
            cached = provider.hash(self.signing_bytes())
            self._ids[provider.name] = cached
        return cached

    def encode(self) -> bytes:
        return Writer().raw(self.signing_bytes()).bytes(self.signature).getvalue()

    @classmethod
    def read(cls, r: Reader) -> "Transaction":
        tag = r.u8()
        ptype = PAYLOAD_TYPES.get(tag)
        if ptype is None:
            raise DecodeError(f"unknown transaction type {tag}")
        sender = r.bytes()
        seq = r.u64()
        fee = r.u64()
        payload = ptype.decode(r)
        return cls(sender, seq, fee, payload, r.bytes())

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        tx = cls.read(r)
        r.finish()
        # The signature is the trailing length-prefixed field.
        tx._ids[b""] = bytes(data[: len(data) - 4 - len(tx.signature)])
        return tx

    def signature_valid(self, provider: Provider) -> bool:
        if self.is_coinbase:
            return True
        return provider.verify(self.sender, self.signing_bytes(), self.signature)


def sign_transaction(
    provider: Provider, keypair: KeyPair, seq: int, fee: int, payload: Payload
) -> Transaction:
    unsigned = Transaction(keypair.public_key, seq, fee, payload)
    sig = provider.sign(keypair.private_key, unsigned.signing_bytes())
    return replace(unsigned, signature=sig)


def make_coinbase(recipient: bytes, amount: int, height: int) -> Transaction:
    return Transaction(b"", height, 0, Coinbase(recipient, amount))


def make_entity(
    provider: Provider,
    account: KeyPair,
    auth: KeyPair,
    name: str,
    entity_type: EntityType,
    seq: int,
    fee: int,
) -> Transaction:
    """Entity registration, including the auth key's proof of possession."""
    proof = provider.sign(auth.private_key, account.public_key)
    payload = Entity(name, EntityType(entity_type), auth.public_key, proof)
    return sign_transaction(provider, account, seq, fee, payload)


def encode_canonical(value: "Transaction | BlockHeader") -> bytes:
    return value.encode()


# --- headers and blocks ---------------------------------------------------


@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent_digest: bytes
    tx_commitment: bytes
    timestamp: int
    proposer: bytes
    quorum_cert: tuple[tuple[bytes, bytes], ...] = ()
    header_digest: bytes = ZERO_DIGEST

    def signing_bytes(self) -> bytes:
        """Header bytes without certificate and digest; what validators sign."""
        w = Writer()
        w.u64(self.height).bytes(self.parent_digest).bytes(self.tx_commitment)
        w.u64(self.timestamp).bytes(self.proposer)
        return w.getvalue()

    def encode(self) -> bytes:
        w = Writer().raw(self.signing_bytes())
        w.u32(len(self.quorum_cert))
        for key, sig in self.quorum_cert:
            w.bytes(key).bytes(sig)
        w.bytes(self.header_digest)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> "BlockHeader":
        height = r.u64()
        parent = r.digest()
        commitment = r.digest()
        timestamp = r.u64()
        proposer = r.bytes()
        cert = tuple((r.bytes(), r.bytes()) for _ in range(r.count(10_000)))
        return cls(height, parent, commitment, timestamp, proposer, cert, r.digest())

    @classmethod
    def decode(cls, data: bytes) -> "BlockHeader":
        r = Reader(data)
        header = cls.read(r)
        r.finish()
        return header

    def compute_digest(self, provider: Provider) -> bytes:
        return provider.hash(self.signing_bytes())

    def with_cert(self, cert: Iterable[tuple[bytes, bytes]]) -> "BlockHeader":
        return replace(self, quorum_cert=tuple(cert))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def digest(self) -> bytes:
        return self.header.header_digest

    def encode(self) -> bytes:
        w = Writer().raw(self.header.encode()).u32(len(self.transactions))
        for tx in self.transactions:
            w.bytes(tx.encode())
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> "Block":
        header = BlockHeader.read(r)
        txs = tuple(Transaction.decode(r.bytes()) for _ in range(r.count(MAX_TXS_PER_BLOCK)))
        return cls(header, txs)

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        block = cls.read(r)
        r.finish()
        return block

    def with_cert(self, cert: Iterable[tuple[bytes, bytes]]) -> "Block":
        return replace(self, header=self.header.with_cert(cert))

    def tx_ids(self, provider: Provider) -> list[bytes]:
        return [tx.id(provider) for tx in self.transactions]


# --- merkle commitment ----------------------------------------------------

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


def _leaf(provider: Provider, item: bytes) -> bytes:
    return provider.hash(LEAF_PREFIX + item)


def _node(provider: Provider, left: bytes, right: bytes) -> bytes:
    return provider.hash(NODE_PREFIX + left + right)


def merkle_root(provider: Provider, ids: Sequence[bytes]) -> bytes:
    if not ids:
        return provider.hash(b"")
    layer = [_leaf(provider, i) for i in ids]
    while len(layer) > 1:
        if len(layer) % 2:
            layer.append(layer[-1])
        layer = [_node(provider, layer[i], layer[i + 1]) for i in range(0, len(layer), 2)]
    return layer[0]


SIBLING_RIGHT = 0
SIBLING_LEFT = 1


@dataclass(frozen=True)
class InclusionProof:
    tx_id: bytes
    index: int
    path: tuple[tuple[bytes, int], ...]

    def write(self, w: Writer) -> None:
        w.bytes(self.tx_id).u64(self.index).u32(len(self.path))
        for sibling, side in self.path:
            w.bytes(sibling).u8(side)

    @classmethod
    def read(cls, r: Reader) -> "InclusionProof":
        tx_id = r.bytes()
        index = r.u64()
        path = tuple((r.bytes(), r.u8()) for _ in range(r.count(64)))
        return cls(tx_id, index, path)


class AbsentTx(KeyError):
    pass


def prove_inclusion(provider: Provider, block: Block, tx_id: bytes) -> InclusionProof:
    ids = block.tx_ids(provider)
    try:
        index = ids.index(tx_id)
    except ValueError:
        raise AbsentTx(tx_id.hex()) from None
    layer = [_leaf(provider, i) for i in ids]
    pos = index
    path = []
    while len(layer) > 1:
        if len(layer) % 2:
            layer.append(layer[-1])
        if pos % 2:
            path.append((layer[pos - 1], SIBLING_LEFT))
        else:
            path.append((layer[pos + 1], SIBLING_RIGHT))
        layer = [_node(provider, layer[i], layer[i + 1]) for i in range(0, len(layer), 2)]
        pos //= 2
    return InclusionProof(tx_id, index, tuple(path))


def verify_inclusion(
    provider: Provider, header: BlockHeader, tx_id: bytes, proof: InclusionProof
) -> bool:
    if proof.tx_id != tx_id or len(tx_id) != DIGEST_SIZE:
        return False
    # The side flags must spell out the claimed index, so the index is authenticated too.
    if proof.index >> len(proof.path):
        return False
    acc = _leaf(provider, tx_id)
    for level, (sibling, side) in enumerate(proof.path):
        if len(sibling) != DIGEST_SIZE or side != (proof.index >> level) & 1:
            return False
        if side == SIBLING_LEFT:
            acc = _node(provider, sibling, acc)
        elif side == SIBLING_RIGHT:
            acc = _node(provider, acc, sibling)
        else:
            return False
    return acc == header.tx_commitment


# --- construction and validation ----------------------------------------


class BlockError(Exception):
    pass


class MalformedTx(BlockError):
    pass


class LinkMismatch(BlockError):
    pass


class CommitmentMismatch(BlockError):
    pass


class BadQuorum(BlockError):
    pass


class BadDigest(BlockError):
    pass


def _seal(provider: Provider, header: BlockHeader) -> BlockHeader:
    return replace(header, header_digest=header.compute_digest(provider))


def make_genesis(
    provider: Provider, allocations: Sequence[tuple[bytes, int]], timestamp: int = 0
) -> Block:
    txs = tuple(make_coinbase(pk, amount, i) for i, (pk, amount) in enumerate(allocations))
    header = BlockHeader(
        height=0,
        parent_digest=ZERO_DIGEST,
        tx_commitment=merkle_root(provider, [tx.id(provider) for tx in txs]),
        timestamp=timestamp,
        proposer=b"",
    )
    return Block(_seal(provider, header), txs)


def build_block(
    provider: Provider,
    parent: BlockHeader,
    txs: Sequence[Transaction],
    proposer_key: KeyPair,
    timestamp: int,
) -> Block:
    ids = []
    for i, tx in enumerate(txs):
        if not tx.signature_valid(provider):
            raise MalformedTx(f"transaction {i} has an invalid signature")
        ids.append(tx.id(provider))
    if len(set(ids)) != len(ids):
        raise MalformedTx("duplicate transaction ids")
    header = BlockHeader(
        height=parent.height + 1,
        parent_digest=parent.header_digest,
        tx_commitment=merkle_root(provider, ids),
        timestamp=timestamp,
        proposer=proposer_key.public_key,
    )
    return Block(_seal(provider, header), tuple(txs))


def quorum_size(n_validators: int) -> int:
    """Smallest signer count strictly above two thirds of the validator set."""
    return (2 * n_validators) // 3 + 1


def sign_vote(provider: Provider, keypair: KeyPair, header: BlockHeader) -> bytes:
    return provider.sign(keypair.private_key, header.signing_bytes())


def check_quorum(provider: Provider, header: BlockHeader, validators: Iterable[bytes]) -> None:
    validator_set = set(validators)
    message = header.signing_bytes()
    seen: set[bytes] = set()
    for key, sig in header.quorum_cert:
        if key not in validator_set:
            raise BadQuorum("certificate signer is not a validator")
        if key in seen:
            raise BadQuorum("duplicate certificate signer")
        if not provider.verify(key, message, sig):
            raise BadQuorum("invalid certificate signature")
        seen.add(key)
    if 3 * len(seen) <= 2 * len(validator_set):
        raise BadQuorum(f"{len(seen)} of {len(validator_set)} signatures is not above 2/3")


def validate_block(
    provider: Provider,
    parent: BlockHeader | None,
    block: Block,
    validators: Iterable[bytes],
    require_quorum: bool = True,
) -> None:
    """Raise a ``BlockError`` subclass on the first failing check.

    ``parent`` is ``None`` only for a genesis block, which is exempt from the
    quorum requirement.
    """
    header = block.header
    if header.compute_digest(provider) != header.header_digest:
        raise BadDigest(f"header digest mismatch at height {header.height}")
    if parent is None:
        if header.height != 0 or header.parent_digest != ZERO_DIGEST:
            raise LinkMismatch("genesis must have height 0 and a zero parent")
    elif header.height != parent.height + 1 or header.parent_digest != parent.header_digest:
        raise LinkMismatch(f"block {header.height} does not extend parent {parent.height}")
    ids = block.tx_ids(provider)
    if len(set(ids)) != len(ids):
        raise CommitmentMismatch("duplicate transaction ids")
    if merkle_root(provider, ids) != header.tx_commitment:
        raise CommitmentMismatch(f"transaction commitment mismatch at height {header.height}")
    if parent is not None and require_quorum:
        check_quorum(provider, header, validators)


def validate_header_link(
    provider: Provider, parent: BlockHeader, header: BlockHeader, validators: Iterable[bytes]
) -> None:
    """Header-only check used by light nodes: digest, link and certificate."""
    if header.compute_digest(provider) != header.header_digest:
        raise BadDigest(f"header digest mismatch at height {header.height}")
    if header.height != parent.height + 1 or header.parent_digest != parent.header_digest:
        raise LinkMismatch(f"header {header.height} does not extend parent {parent.height}")
    check_quorum(provider, header, validators)
