"""Append-only chain persistence file.

Layout::

    b"DCHN" u32(version)
    u32(len) config-bytes  digest(config-bytes)
    { u32(len) canonical-block-bytes }*

The config record carries what a reader needs to audit the chain on its own:
the crypto provider name, the validator set and the fee parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .codec import DecodeError, Reader, Writer
from .crypto import Provider, get_provider
from .ledger import Block, BlockError, validate_block
from .state import BlockApplyError, FeeParams, LedgerState, apply_block
from .trust_graph import DEFAULT_GLOBAL_CAP, TrustGraph, relevant_subgraph

MAGIC = b"DCHN"
VERSION = 1


@dataclass(frozen=True)
class ChainConfig:
    provider: str
    validators: tuple[bytes, ...]
    fees: FeeParams = field(default_factory=FeeParams)

    def encode(self) -> bytes:
        w = Writer().str(self.provider).u32(len(self.validators))
        for key in self.validators:
            w.bytes(key)
        self.fees.encode(w)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "ChainConfig":
        r = Reader(data)
        provider = r.str()
        validators = tuple(r.bytes() for _ in range(r.count(10_000)))
        fees = FeeParams(r.u64(), r.u64(), r.u64(), r.u64())
        r.finish()
        return cls(provider, validators, fees)


class ChainFileError(Exception):
    """Integrity failure; ``height`` is the earliest bad block (-1 for the config record)."""

    def __init__(self, height: int, message: str):
        super().__init__(f"height {height}: {message}" if height >= 0 else message)
        self.height = height


def encode_header(config: ChainConfig) -> bytes:
    provider = get_provider(config.provider)
    body = config.encode()
    return MAGIC + struct.pack(">I", VERSION) + struct.pack(">I", len(body)) + body + provider.hash(body)


def encode_record(block: Block) -> bytes:
    data = block.encode()
    return struct.pack(">I", len(data)) + data


def encode_chain(config: ChainConfig, blocks: Sequence[Block]) -> bytes:
    return encode_header(config) + b"".join(encode_record(b) for b in blocks)


def write_chain(path: str | Path, config: ChainConfig, blocks: Sequence[Block]) -> None:
    Path(path).write_bytes(encode_chain(config, blocks))


def _read_config(r: Reader) -> ChainConfig:
    try:
        if r._take(4) != MAGIC:
            raise ChainFileError(-1, "bad magic")
        if r.u32() != VERSION:
            raise ChainFileError(-1, "unsupported version")
        body = r.bytes()
        config = ChainConfig.decode(body)
        provider = get_provider(config.provider)
        if r._take(32) != provider.hash(body):
            raise ChainFileError(-1, "config checksum mismatch")
    except (DecodeError, ValueError) as exc:
        if isinstance(exc, ChainFileError):
            raise
        raise ChainFileError(-1, f"corrupt config record: {exc}") from None
    return config


def _iter_blocks(r: Reader) -> Iterator[Block]:
    height = 0
    while r.remaining:
        try:
            yield Block.decode(r.bytes())
        except (DecodeError, ValueError) as exc:
            raise ChainFileError(height, f"undecodable block record: {exc}") from None
        height += 1


def decode_chain(data: bytes) -> tuple[ChainConfig, list[Block]]:
    """Parse without semantic checks beyond the config checksum."""
    r = Reader(data)
    config = _read_config(r)
    return config, list(_iter_blocks(r))


@dataclass
class AuditResult:
    config: ChainConfig
    blocks: list[Block]
    states: list[LedgerState]

    @property
    def tip(self) -> int:
        return len(self.blocks) - 1


def audit_chain(data: bytes) -> AuditResult:
    """Decode, verify every link/commitment/certificate, and replay state.

    Raises ``ChainFileError`` naming the earliest block that fails.
    """
    # Records are decoded lazily so the earliest failing height is reported.
    r = Reader(data)
    config = _read_config(r)
    provider: Provider = get_provider(config.provider)
    blocks: list[Block] = []
    states: list[LedgerState] = []
    state = LedgerState()
    parent = None
    for i, block in enumerate(_iter_blocks(r)):
        if block.height != i:
            raise ChainFileError(i, f"record {i} holds height {block.height}")
        try:
            validate_block(provider, parent, block, config.validators)
            state = apply_block(provider, state, block, config.fees)
        except (BlockError, BlockApplyError) as exc:
            raise ChainFileError(i, f"{type(exc).__name__}: {exc}") from None
        blocks.append(block)
        states.append(state)
        parent = block.header
    if not blocks:
        raise ChainFileError(0, "chain has no genesis block")
    return AuditResult(config, blocks, states)


def read_chain(path: str | Path) -> AuditResult:
    return audit_chain(Path(path).read_bytes())


def describe_block(audit: AuditResult, height: int | None = None) -> dict:
    """Header fields, transaction count and post-state digest at ``height`` (tip by default)."""
    if height is None:
        height = audit.tip
    if not 0 <= height <= audit.tip:
        raise IndexError(f"height {height} out of range 0..{audit.tip}")
    provider = get_provider(audit.config.provider)
    block = audit.blocks[height]
    h = block.header
    return {
        "height": h.height,
        "header_digest": h.header_digest.hex(),
        "parent_digest": h.parent_digest.hex(),
        "tx_commitment": h.tx_commitment.hex(),
        "timestamp": h.timestamp,
        "proposer": h.proposer.hex(),
        "quorum_signatures": len(h.quorum_cert),
        "tx_count": len(block.transactions),
        "state_digest": audit.states[height].digest(provider).hex(),
        "tip": audit.tip,
    }


def chain_graph(audit: AuditResult, anchors: Sequence[bytes] = (), global_cap: int = DEFAULT_GLOBAL_CAP) -> TrustGraph:
    """Trust graph at the tip; restricted to the relevant subgraph when anchors are given.

    Raises ``KeyError`` for an anchor that is not a registered entity.
    """
    graph = audit.states[-1].graph
    if not anchors:
        return graph
    for key in anchors:
        if key not in graph.nodes:
            raise KeyError(key.hex())
    return relevant_subgraph(graph, anchors, global_cap)
