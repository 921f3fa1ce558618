"""Full node: whole chain, ledger state, mempool, and the voting engine.

Consensus runs in fixed time rounds of ``round_ms``. Round ``r`` at height
``h`` has a primary proposer ``validators[h mod n]`` acting at the round
start, and one fallback (the next validator in rotation) acting at mid-round
if no proposal for ``h`` was seen. Validators vote once per round; a quorum
is more than two thirds of the validator set voting for the same block in the
same round.

A validator that voted for block ``B`` is locked on it and keeps voting
``B`` in later rounds. It unlocks only after seeing, in a single round no
older than its lock, more than ``n - q`` validators vote for other blocks,
at which point ``B`` can no longer gather a quorum. This keeps commits unique
per height under crashes and message loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..chainfile import ChainConfig, audit_chain, encode_header, encode_record
from ..ledger import (
    Block,
    BlockError,
    Confirmation,
    Entity,
    Revocation,
    RevokeEntity,
    Transaction,
    build_block,
    make_coinbase,
    prove_inclusion,
    quorum_size,
    sign_vote,
    validate_block,
)
from ..state import (
    BlockApplyError,
    LedgerState,
    TxError,
    apply_block,
    apply_transaction,
    validate_candidate,
)
from ..trust_graph import TrustGraph, relevant_subgraph
from .base import BaseNode, CommitEvent, Envelope, Identity
from .wire import (
    BlockRequest,
    BlockResponse,
    EntityQuery,
    EntityResponse,
    HeaderRequest,
    HeaderResponse,
    NewBlock,
    ProvenTx,
    SubmitTx,
    Vote,
    WireMessage,
)

MAX_BLOCK_TXS = 500
SYNC_BATCH = 64


@dataclass
class HeightRound:
    """Consensus bookkeeping for the height currently being decided."""

    proposals: dict[bytes, Block] = field(default_factory=dict)
    proposal_rounds: set[int] = field(default_factory=set)
    votes: dict[int, dict[bytes, bytes]] = field(default_factory=dict)
    signatures: dict[tuple[bytes, bytes], bytes] = field(default_factory=dict)
    pending_votes: list[Vote] = field(default_factory=list)
    my_votes: dict[int, bytes] = field(default_factory=dict)
    lock: tuple[bytes, int] | None = None
    proposed: set[int] = field(default_factory=set)


class FullNode(BaseNode):
    role = "full"

    def __init__(
        self,
        identity: Identity,
        config: ChainConfig,
        genesis: Block,
        provider,
        round_ms: int = 1000,
        **kwargs,
    ):
        super().__init__(identity, config, genesis, provider, **kwargs)
        if round_ms < 2:
            raise ValueError("round_ms must be at least 2")
        self.round_ms = round_ms
        self.full_peers: tuple[bytes, ...] = tuple(v for v in config.validators if v != self.key)
        self._load([genesis])
        self.persisted = bytearray(encode_header(config) + encode_record(genesis))
        self.consensus = HeightRound()
        self._last_sync_round = -1
        self._commit_round = -1

    # -- chain and state ---------------------------------------------------

    def _load(self, blocks: list[Block]) -> None:
        self.chain: list[Block] = []
        self.ledger = LedgerState()
        self.committed_ids: set[bytes] = set()
        self.tx_locations: dict[bytes, tuple[int, int]] = {}
        self.entity_tx: dict[bytes, tuple[int, int]] = {}
        self.edge_tx: dict[tuple[bytes, bytes], tuple[int, int]] = {}
        self.mempool: dict[bytes, Transaction] = {}
        self.pending_state = self.ledger
        for block in blocks:
            self._append(block)
        self.pending_state = self.ledger

    def _append(self, block: Block) -> None:
        self.ledger = apply_block(self.provider, self.ledger, block, self.config.fees)
        self.chain.append(block)
        for index, tx in enumerate(block.transactions):
            tx_id = tx.id(self.provider)
            self.committed_ids.add(tx_id)
            self.tx_locations[tx_id] = (block.height, index)
            self._index_graph_tx(tx, (block.height, index))

    def _index_graph_tx(self, tx: Transaction, loc: tuple[int, int]) -> None:
        p = tx.payload
        if isinstance(p, Entity):
            self.entity_tx[tx.sender] = loc
        elif isinstance(p, RevokeEntity):
            self.entity_tx.pop(tx.sender, None)
            for edge in [e for e in self.edge_tx if tx.sender in e]:
                del self.edge_tx[edge]
        elif isinstance(p, Confirmation):
            self.edge_tx[(tx.sender, p.subject)] = loc
        elif isinstance(p, Revocation):
            self.edge_tx.pop((tx.sender, p.subject), None)

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    @property
    def tip(self) -> Block:
        return self.chain[-1]

    def state_digest(self) -> bytes:
        return self.ledger.digest(self.provider.inner)

    def trust_view(self) -> TrustGraph:
        return self.ledger.graph

    @classmethod
    def restore(cls, data: bytes, identity: Identity, provider, **kwargs) -> "FullNode":
        """Rebuild a node from its persisted chain file."""
        audit = audit_chain(bytes(data))
        node = cls(identity, audit.config, audit.blocks[0], provider, **kwargs)
        node._load(audit.blocks)
        node.persisted = bytearray(data)
        return node

    def restart(self) -> None:
        """Crash recovery: volatile state is rebuilt from the persisted chain.

        The vote/lock record of the current height is kept, as a write-ahead
        log would keep it.
        """
        consensus = self.consensus
        audit = audit_chain(bytes(self.persisted))
        self._load(audit.blocks)
        if consensus.proposals and next(iter(consensus.proposals.values())).height == self.height + 1:
            self.consensus = HeightRound(lock=consensus.lock, my_votes=dict(consensus.my_votes),
                                         proposals=dict(consensus.proposals))
        else:
            self.consensus = HeightRound()

    # -- mempool -----------------------------------------------------------

    def submit_transaction(self, tx: Transaction, now: int = 0, sender: bytes | None = None) -> list[Envelope]:
        """Admit ``tx`` to the mempool and gossip it; raises ``TxError`` on rejection."""
        tx_id = tx.id(self.provider)
        if tx_id in self.mempool or tx_id in self.committed_ids:
            return []
        try:
            validate_candidate(self.provider, self.pending_state, tx, self.config.fees)
        except TxError:
            self.counters.rejected_txs += 1
            raise
        self.pending_state = apply_transaction(self.provider, self.pending_state, tx, self.config.fees)
        self.mempool[tx_id] = tx
        return [Envelope(peer, SubmitTx(tx)) for peer in self.full_peers if peer != sender]

    def _rebuild_mempool(self) -> None:
        pending = self.ledger
        kept: dict[bytes, Transaction] = {}
        for tx_id, tx in self.mempool.items():
            if tx_id in self.committed_ids:
                continue
            try:
                pending = apply_transaction(self.provider, pending, tx, self.config.fees)
            except TxError:
                continue
            kept[tx_id] = tx
        self.mempool = kept
        self.pending_state = pending

    # -- consensus ---------------------------------------------------------

    def round_of(self, now: int) -> int:
        return now // self.round_ms

    def proposer_for(self, height: int, fallback: int = 0) -> bytes:
        n = len(self.validators)
        return self.validators[(height + fallback) % n]

    def consensus_step(self, now: int) -> list[Envelope]:
        """Timer tick; call at every round start and mid-round."""
        if self.key not in self.validators:
            return []
        r = self.round_of(now)
        if r == self._commit_round:
            return []
        h = self.height + 1
        mid_round = now % self.round_ms >= self.round_ms // 2
        if mid_round:
            if r in self.consensus.proposal_rounds or self.proposer_for(h, 1) != self.key:
                return []
        elif self.proposer_for(h) != self.key:
            return []
        if r in self.consensus.proposed:
            return []
        self.consensus.proposed.add(r)
        block = self._choose_proposal(h, now)
        out = [Envelope(peer, NewBlock(block, r)) for peer in self.full_peers]
        return out + self._on_proposal(block, r, now)

    def _choose_proposal(self, h: int, now: int) -> Block:
        cs = self.consensus
        if cs.lock is not None:
            return cs.proposals[cs.lock[0]]
        if cs.proposals:
            support = {d: 0 for d in cs.proposals}
            for ballots in cs.votes.values():
                for d in ballots.values():
                    if d in support:
                        support[d] += 1
            return cs.proposals[min(support, key=lambda d: (-support[d], d))]
        txs = [make_coinbase(self.key, self.config.fees.block_reward, h)]
        state = apply_transaction(self.provider, self.ledger, txs[0], self.config.fees)
        for tx in self.mempool.values():
            if len(txs) >= MAX_BLOCK_TXS:
                break
            try:
                state = apply_transaction(self.provider, state, tx, self.config.fees)
            except TxError:
                continue
            txs.append(tx)
        return build_block(self.provider, self.tip.header, txs, self.identity.account, now)

    def _check_proposal(self, block: Block) -> bool:
        try:
            if block.header.proposer not in self.validators:
                return False
            validate_block(self.provider, self.tip.header, block, self.validators, require_quorum=False)
            apply_block(self.provider, self.ledger, block, self.config.fees)
        except (BlockError, BlockApplyError, TxError):
            return False
        return True

    def _on_proposal(self, block: Block, r: int, now: int) -> list[Envelope]:
        cs = self.consensus
        digest = block.digest
        if digest not in cs.proposals:
            if not self._check_proposal(block):
                self.counters.invalid_proposals += 1
                return []
            cs.proposals[digest] = block
        cs.proposal_rounds.add(r)
        out: list[Envelope] = []
        if r not in cs.my_votes:
            choice = cs.lock[0] if cs.lock is not None else digest
            out += self._cast_vote(r, choice, now)
        pending, cs.pending_votes = cs.pending_votes, []
        for vote in pending:
            out += self._on_vote(vote, now)
        return out

    def _cast_vote(self, r: int, digest: bytes, now: int) -> list[Envelope]:
        cs = self.consensus
        block = cs.proposals[digest]
        sig = sign_vote(self.provider, self.identity.account, block.header)
        cs.my_votes[r] = digest
        cs.lock = (digest, max(r, cs.lock[1]) if cs.lock else r)
        vote = Vote(block.height, r, digest, self.key, sig)
        out = [Envelope(peer, vote) for peer in self.full_peers]
        return out + self._on_vote(vote, now)

    def _on_vote(self, vote: Vote, now: int) -> list[Envelope]:
        cs = self.consensus
        h = self.height + 1
        if vote.height != h or vote.voter not in self.validators:
            return []
        block = cs.proposals.get(vote.header_digest)
        if block is None:
            if len(cs.pending_votes) < 16 * len(self.validators):
                cs.pending_votes.append(vote)
            return []
        ballots = cs.votes.setdefault(vote.round, {})
        if vote.voter in ballots:
            return []
        if not self.provider.verify(vote.voter, block.header.signing_bytes(), vote.signature):
            self.counters.malformed += 1
            return []
        ballots[vote.voter] = vote.header_digest
        cs.signatures[(vote.header_digest, vote.voter)] = vote.signature
        self._maybe_unlock()
        supporters = [v for v, d in ballots.items() if d == vote.header_digest]
        if len(supporters) >= quorum_size(len(self.validators)):
            order = {v: i for i, v in enumerate(self.validators)}
            cert = [(v, cs.signatures[(vote.header_digest, v)]) for v in sorted(supporters, key=order.get)]
            return self._commit_block(block.with_cert(cert), now)
        return []

    def _maybe_unlock(self) -> None:
        cs = self.consensus
        if cs.lock is None:
            return
        locked, since = cs.lock
        slack = len(self.validators) - quorum_size(len(self.validators))
        for r, ballots in cs.votes.items():
            if r >= since and sum(1 for d in ballots.values() if d != locked) > slack:
                cs.lock = None
                return

    def _commit_block(self, block: Block, now: int, announce: bool = True) -> list[Envelope]:
        self._append(block)
        self.persisted += encode_record(block)
        self._rebuild_mempool()
        self.consensus = HeightRound()
        self._commit_round = self.round_of(now)
        self.events.append(
            CommitEvent(block.height, block.digest, tuple(block.tx_ids(self.provider)), now)
        )
        if announce and block.header.proposer == self.key:
            return [Envelope(peer, NewBlock(block, self.round_of(now))) for peer in self.full_peers]
        return []

    def _accept_certified(self, block: Block, now: int) -> list[Envelope]:
        if block.height != self.height + 1:
            return []
        try:
            validate_block(self.provider, self.tip.header, block, self.validators)
            apply_block(self.provider, self.ledger, block, self.config.fees)
        except (BlockError, BlockApplyError):
            self.counters.invalid_proposals += 1
            return []
        return self._commit_block(block, now, announce=False)

    def _request_sync(self, peer: bytes, now: int) -> list[Envelope]:
        r = self.round_of(now)
        if self._last_sync_round == r:
            return []
        self._last_sync_round = r
        return [Envelope(peer, BlockRequest(self.height + 1))]

    # -- dispatch ----------------------------------------------------------

    def _handle(self, msg: WireMessage, sender: bytes, now: int) -> list[Envelope]:
        h = self.height + 1
        if isinstance(msg, SubmitTx):
            try:
                return self.submit_transaction(msg.tx, now, sender=sender)
            except TxError:
                return []
        if isinstance(msg, NewBlock):
            block = msg.block
            if block.height > h:
                return self._request_sync(sender, now)
            if block.height < h:
                return []
            if block.header.quorum_cert:
                return self._accept_certified(block, now)
            return self._on_proposal(block, msg.round, now)
        if isinstance(msg, Vote):
            if msg.height > h:
                return self._request_sync(sender, now)
            return self._on_vote(msg, now)
        if isinstance(msg, BlockRequest):
            blocks = tuple(self.chain[msg.from_height : msg.from_height + SYNC_BATCH])
            return [Envelope(sender, BlockResponse(blocks))] if blocks else []
        if isinstance(msg, BlockResponse):
            out: list[Envelope] = []
            for block in msg.blocks:
                if block.height == self.height + 1:
                    out += self._accept_certified(block, now)
            return out
        if isinstance(msg, HeaderRequest):
            headers = tuple(b.header for b in self.chain[msg.from_height :])
            return [Envelope(sender, HeaderResponse(headers))]
        if isinstance(msg, EntityQuery):
            return [Envelope(sender, self.answer_entity_query(msg))]
        return []

    # -- light-node service ------------------------------------------------

    def answer_entity_query(self, query: EntityQuery) -> EntityResponse:
        """Relevant subgraph for the anchors, as proven transactions plus new headers."""
        sub = relevant_subgraph(self.ledger.graph, query.anchors, self.global_cap) if query.anchors else TrustGraph()
        locations = sorted(
            {self.entity_tx[k] for k in sub.nodes} | {self.edge_tx[e] for e in sub.edges}
        )
        items = []
        for height, index in locations:
            block = self.chain[height]
            tx = block.transactions[index]
            items.append(ProvenTx(height, tx, prove_inclusion(self.provider, block, tx.id(self.provider))))
        headers = tuple(b.header for b in self.chain[query.from_height :])
        return EntityResponse(headers, tuple(items))


def make_validators(nodes: Iterable[FullNode]) -> None:
    """Point every full node at the others (used in tests)."""
    nodes = list(nodes)
    for node in nodes:
        node.full_peers = tuple(n.key for n in nodes if n is not node)
