"""Wire messages exchanged between nodes, with their canonical encoding.

Every message starts with a one-byte tag. ``NewBlock`` doubles as proposal
(empty quorum certificate) and commit announcement (certificate attached).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Union

from ..auth import AuthResponse, Challenge
from ..codec import DecodeError, Reader, Writer
from ..ledger import Block, BlockHeader, InclusionProof, Transaction

MAX_BATCH = 10_000


@dataclass(frozen=True)
class SubmitTx:
    TAG: ClassVar[int] = 1
    tx: Transaction

    def write(self, w: Writer) -> None:
        w.bytes(self.tx.encode())

    @classmethod
    def read(cls, r: Reader) -> "SubmitTx":
        return cls(Transaction.decode(r.bytes()))


@dataclass(frozen=True)
class NewBlock:
    TAG: ClassVar[int] = 2
    block: Block
    round: int = 0

    def write(self, w: Writer) -> None:
        w.u64(self.round).bytes(self.block.encode())

    @classmethod
    def read(cls, r: Reader) -> "NewBlock":
        rnd = r.u64()
        return cls(Block.decode(r.bytes()), rnd)


@dataclass(frozen=True)
class Vote:
    TAG: ClassVar[int] = 3
    height: int
    round: int
    header_digest: bytes
    voter: bytes
    signature: bytes

    def write(self, w: Writer) -> None:
        w.u64(self.height).u64(self.round).bytes(self.header_digest)
        w.bytes(self.voter).bytes(self.signature)

    @classmethod
    def read(cls, r: Reader) -> "Vote":
        return cls(r.u64(), r.u64(), r.digest(), r.bytes(), r.bytes())


@dataclass(frozen=True)
class HeaderRequest:
    TAG: ClassVar[int] = 4
    from_height: int

    def write(self, w: Writer) -> None:
        w.u64(self.from_height)

    @classmethod
    def read(cls, r: Reader) -> "HeaderRequest":
        return cls(r.u64())


@dataclass(frozen=True)
class HeaderResponse:
    TAG: ClassVar[int] = 5
    headers: tuple[BlockHeader, ...]

    def write(self, w: Writer) -> None:
        w.u32(len(self.headers))
        for h in self.headers:
            w.bytes(h.encode())

    @classmethod
    def read(cls, r: Reader) -> "HeaderResponse":
        return cls(tuple(BlockHeader.decode(r.bytes()) for _ in range(r.count(MAX_BATCH))))


@dataclass(frozen=True)
class EntityQuery:
    """Ask a full node for the trust subgraph relevant to ``anchors``.

    ``target`` is informational (may be empty); the answer always covers the
    anchors' whole relevant subgraph.
    """

    TAG: ClassVar[int] = 6
    target: bytes
    anchors: tuple[bytes, ...]
    from_height: int

    def write(self, w: Writer) -> None:
        w.bytes(self.target).u32(len(self.anchors))
        for a in self.anchors:
            w.bytes(a)
        w.u64(self.from_height)

    @classmethod
    def read(cls, r: Reader) -> "EntityQuery":
        target = r.bytes()
        anchors = tuple(r.bytes() for _ in range(r.count(MAX_BATCH)))
        return cls(target, anchors, r.u64())


@dataclass(frozen=True)
class ProvenTx:
    height: int
    tx: Transaction
    proof: InclusionProof

    def write(self, w: Writer) -> None:
        w.u64(self.height).bytes(self.tx.encode())
        self.proof.write(w)

    @classmethod
    def read(cls, r: Reader) -> "ProvenTx":
        height = r.u64()
        tx = Transaction.decode(r.bytes())
        return cls(height, tx, InclusionProof.read(r))


@dataclass(frozen=True)
class EntityResponse:
    TAG: ClassVar[int] = 7
    headers: tuple[BlockHeader, ...]
    items: tuple[ProvenTx, ...]

    def write(self, w: Writer) -> None:
        w.u32(len(self.headers))
        for h in self.headers:
            w.bytes(h.encode())
        w.u32(len(self.items))
        for item in self.items:
            item.write(w)

    @classmethod
    def read(cls, r: Reader) -> "EntityResponse":
        headers = tuple(BlockHeader.decode(r.bytes()) for _ in range(r.count(MAX_BATCH)))
        items = tuple(ProvenTx.read(r) for _ in range(r.count(MAX_BATCH)))
        return cls(headers, items)


@dataclass(frozen=True)
class BlockRequest:
    TAG: ClassVar[int] = 8
    from_height: int

    def write(self, w: Writer) -> None:
        w.u64(self.from_height)

    @classmethod
    def read(cls, r: Reader) -> "BlockRequest":
        return cls(r.u64())


@dataclass(frozen=True)
class BlockResponse:
    TAG: ClassVar[int] = 9
    blocks: tuple[Block, ...]

    def write(self, w: Writer) -> None:
        w.u32(len(self.blocks))
        for b in self.blocks:
            w.bytes(b.encode())

    @classmethod
    def read(cls, r: Reader) -> "BlockResponse":
        return cls(tuple(Block.decode(r.bytes()) for _ in range(r.count(MAX_BATCH))))


@dataclass(frozen=True)
class AuthChallenge:
    TAG: ClassVar[int] = 10
    challenge: Challenge

    def write(self, w: Writer) -> None:
        self.challenge.write(w)

    @classmethod
    def read(cls, r: Reader) -> "AuthChallenge":
        return cls(Challenge.read(r))


@dataclass(frozen=True)
class AuthReply:
    TAG: ClassVar[int] = 11
    response: AuthResponse

    def write(self, w: Writer) -> None:
        self.response.write(w)

    @classmethod
    def read(cls, r: Reader) -> "AuthReply":
        return cls(AuthResponse.read(r))


WireMessage = Union[
    SubmitTx,
    NewBlock,
    Vote,
    HeaderRequest,
    HeaderResponse,
    EntityQuery,
    EntityResponse,
    BlockRequest,
    BlockResponse,
    AuthChallenge,
    AuthReply,
]

MESSAGE_TYPES: dict[int, type] = {
    cls.TAG: cls
    for cls in (
        SubmitTx,
        NewBlock,
        Vote,
        HeaderRequest,
        HeaderResponse,
        EntityQuery,
        EntityResponse,
        BlockRequest,
        BlockResponse,
        AuthChallenge,
        AuthReply,
    )
}


def encode_message(msg: WireMessage) -> bytes:
    w = Writer().u8(msg.TAG)
    msg.write(w)
    return w.getvalue()


def decode_message(data: bytes) -> WireMessage:
    """Decode one message; raises ``DecodeError`` (or ``ValueError``) on malformed input."""
    r = Reader(data)
    tag = r.u8()
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise DecodeError(f"unknown message tag {tag}")
    msg = cls.read(r)
    r.finish()
    return msg
