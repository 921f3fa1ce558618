"""Light node: certified header chain plus the trust subgraph relevant to its anchors.

Light nodes never vote. Every graph element they hold is rebuilt from
transactions proven against quorum-certified headers.
"""

from __future__ import annotations

from ..ledger import (
    Block,
    BlockError,
    BlockHeader,
    Confirmation,
    Entity,
    Revocation,
    RevokeEntity,
    Transaction,
    validate_header_link,
    verify_inclusion,
)
from ..trust_graph import EntityRecord, GraphError, TrustGraph, relevant_subgraph
from .base import BaseNode, Envelope, NoPeer, RefreshEvent
from .wire import EntityQuery, EntityResponse, HeaderResponse, NewBlock, SubmitTx, WireMessage


class UnverifiableDelta(Exception):
    pass


class LightNode(BaseNode):
    role = "light"

    def __init__(self, identity, config, genesis: Block, provider, peers=(), resubmits: int = 3, **kwargs):
        super().__init__(identity, config, genesis, provider, **kwargs)
        self.headers: list[BlockHeader] = [genesis.header]
        self.local_view = TrustGraph()
        self.peers: list[bytes] = list(peers)
        self.resubmits = resubmits
        self.outbox: list[list] = []  # [tx, sends_left]
        self._next_peer = 0

    @property
    def height(self) -> int:
        return len(self.headers) - 1

    def trust_view(self) -> TrustGraph:
        return self.local_view

    def restart(self) -> None:
        """Headers and the verified view are kept in local storage; the outbox is not."""
        self.outbox = []
        self.pending_auth.clear()

    # -- transactions ------------------------------------------------------

    def submit_transaction(self, tx: Transaction, now: int = 0) -> list[Envelope]:
        if not self.peers:
            raise NoPeer(f"{self.identity.name} has no reachable full node")
        self.outbox.append([tx, self.resubmits])
        return [Envelope(self.peers[0], SubmitTx(tx))]

    # -- refresh -----------------------------------------------------------

    def refresh_request(self, now: int = 0, target: bytes = b"") -> list[Envelope]:
        """Ask the next peer (round-robin) for new headers and the relevant subgraph."""
        if not self.peers:
            raise NoPeer(f"{self.identity.name} has no reachable full node")
        peer = self.peers[self._next_peer % len(self.peers)]
        self._next_peer += 1
        out = [Envelope(peer, EntityQuery(target, self.anchors, self.height + 1))]
        for entry in self.outbox:
            out.append(Envelope(peer, SubmitTx(entry[0])))
            entry[1] -= 1
        self.outbox = [e for e in self.outbox if e[1] > 0]
        return out

    def _extend_headers(self, headers) -> list[BlockHeader]:
        chain = list(self.headers)
        for header in headers:
            if header.height < len(chain):
                if chain[header.height].header_digest != header.header_digest:
                    raise UnverifiableDelta(f"conflicting header at height {header.height}")
                continue
            try:
                validate_header_link(self.provider, chain[-1], header, self.validators)
            except BlockError as exc:
                raise UnverifiableDelta(str(exc)) from None
            chain.append(header)
        return chain

    def apply_entity_response(self, response: EntityResponse) -> None:
        """Verify and install a response; on failure nothing changes."""
        chain = self._extend_headers(response.headers)
        graph = TrustGraph()
        seen = set()
        for item in sorted(response.items, key=lambda it: (it.height, it.proof.index)):
            if item.height >= len(chain):
                raise UnverifiableDelta(f"proof references unknown height {item.height}")
            tx_id = item.tx.id(self.provider)
            if tx_id in seen:
                raise UnverifiableDelta("duplicate transaction in delta")
            seen.add(tx_id)
            if not verify_inclusion(self.provider, chain[item.height], tx_id, item.proof):
                raise UnverifiableDelta(f"inclusion proof failed at height {item.height}")
            graph = _replay(graph, item.tx)
        self.headers = chain
        self.local_view = relevant_subgraph(graph, self.anchors, self.global_cap) if self.anchors else TrustGraph()

    # -- dispatch ----------------------------------------------------------

    def _handle(self, msg: WireMessage, sender: bytes, now: int) -> list[Envelope]:
        if isinstance(msg, EntityResponse):
            try:
                self.apply_entity_response(msg)
            except UnverifiableDelta as exc:
                self.events.append(RefreshEvent(False, self.height, now, str(exc)))
            else:
                self.events.append(RefreshEvent(True, self.height, now))
        elif isinstance(msg, HeaderResponse):
            try:
                self.headers = self._extend_headers(msg.headers)
            except UnverifiableDelta:
                self.counters.malformed += 1
        elif isinstance(msg, NewBlock):
            header = msg.block.header
            if header.height == len(self.headers):
                try:
                    validate_header_link(self.provider, self.headers[-1], header, self.validators)
                except BlockError:
                    self.counters.malformed += 1
                else:
                    self.headers.append(header)
        return []


def _replay(graph: TrustGraph, tx: Transaction) -> TrustGraph:
    p = tx.payload
    try:
        if isinstance(p, Entity):
            return graph.add_node(EntityRecord(tx.sender, p.auth_public_key, p.identity_name, p.entity_type))
        if isinstance(p, RevokeEntity):
            return graph.remove_node(tx.sender) if tx.sender in graph.nodes else graph
        if isinstance(p, Confirmation):
            return graph.set_edge(tx.sender, p.subject, p.max_path_len)
        if isinstance(p, Revocation):
            return graph.remove_edge(tx.sender, p.subject) if (tx.sender, p.subject) in graph.edges else graph
    except (GraphError, ValueError) as exc:
        raise UnverifiableDelta(f"delta is inconsistent: {exc}") from None
    raise UnverifiableDelta(f"unexpected transaction type {tx.tx_type} in delta")


def light_refresh(light: LightNode, peer, now: int = 0) -> TrustGraph:
    """Synchronous refresh against an in-process full node.

    Raises ``UnverifiableDelta`` if the peer's answer fails verification; the
    previous view is kept in that case.
    """
    query = EntityQuery(b"", light.anchors, light.height + 1)
    response = peer.answer_entity_query(query)
    light.apply_entity_response(response)
    return light.local_view
