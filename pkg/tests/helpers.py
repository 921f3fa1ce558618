"""Shared builders for certified chains and small trust graphs."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from dronechain.chainfile import ChainConfig, encode_chain
from dronechain.crypto import KeyPair, Provider, derive_seed
from dronechain.ledger import (
    Block,
    Confirmation,
    EntityType,
    Revocation,
    TokenTransfer,
    build_block,
    make_coinbase,
    make_entity,
    make_genesis,
    sign_transaction,
    sign_vote,
)
from dronechain.state import FeeParams, LedgerState, TxError, apply_block, apply_transaction


def keys(provider: Provider, label: str, n: int) -> list[KeyPair]:
    return [provider.generate_keypair(derive_seed("helpers", label, i)) for i in range(n)]


def certify(provider: Provider, block: Block, signers: list[KeyPair]) -> Block:
    cert = [(kp.public_key, sign_vote(provider, kp, block.header)) for kp in signers]
    return block.with_cert(cert)


@dataclass
class ChainBuilder:
    """Builds a valid certified chain while tracking the expected state."""

    provider: Provider
    n_validators: int = 4
    n_accounts: int = 6
    balance: int = 100
    fees: FeeParams = field(default_factory=FeeParams)

    def __post_init__(self):
        p = self.provider
        self.validators = keys(p, "validator", self.n_validators)
        self.accounts = keys(p, "account", self.n_accounts)
        self.auth = keys(p, "auth", self.n_accounts)
        alloc = [(kp.public_key, self.balance) for kp in self.validators + self.accounts]
        self.genesis = make_genesis(p, alloc)
        self.blocks = [self.genesis]
        self.state = apply_block(p, LedgerState(), self.genesis, self.fees)
        self.states = [self.state]
        self.seq = {kp.public_key: 0 for kp in self.validators + self.accounts}

    @property
    def config(self) -> ChainConfig:
        return ChainConfig(self.provider.name, tuple(v.public_key for v in self.validators), self.fees)

    def tx(self, kp: KeyPair, payload):
        tx = sign_transaction(self.provider, kp, self.seq[kp.public_key], self.fees.tx_fee, payload)
        return tx

    def entity(self, i: int):
        kp = self.accounts[i]
        return make_entity(
            self.provider, kp, self.auth[i], f"e{i}", EntityType.DRONE, self.seq[kp.public_key], self.fees.tx_fee
        )

    def try_add(self, pending: list, tx) -> bool:
        """Append ``tx`` to ``pending`` if it applies on top of the pending state."""
        try:
            self._pending_state = apply_transaction(self.provider, self._pending_state, tx, self.fees)
        except TxError:
            return False
        pending.append(tx)
        self.seq[tx.sender] += 1
        return True

    def start_block(self) -> list:
        height = len(self.blocks)
        proposer = self.validators[height % self.n_validators]
        cb = make_coinbase(proposer.public_key, self.fees.block_reward, height)
        self._pending_state = apply_transaction(self.provider, self.state, cb, self.fees)
        return [cb]

    def seal(self, txs: list, signers: int | None = None) -> Block:
        height = len(self.blocks)
        proposer = self.validators[height % self.n_validators]
        block = build_block(self.provider, self.blocks[-1].header, txs, proposer, timestamp=1000 * height)
        n = self.n_validators if signers is None else signers
        block = certify(self.provider, block, self.validators[:n])
        self.state = apply_block(self.provider, self.state, block, self.fees)
        self.blocks.append(block)
        self.states.append(self.state)
        return block

    def random_tx(self, rng: random.Random):
        kind = rng.choice(["transfer", "transfer", "entity", "confirm", "revoke"])
        i = rng.randrange(self.n_accounts)
        kp = self.accounts[i]
        if kind == "entity":
            return self.entity(i)
        if kind == "transfer":
            to = rng.choice(self.accounts + self.validators).public_key
            return self.tx(kp, TokenTransfer(to, rng.randrange(0, 8)))
        subject = rng.choice(self.accounts).public_key
        if kind == "confirm":
            return self.tx(kp, Confirmation(subject, rng.randint(1, 3)))
        return self.tx(kp, Revocation(subject))

    def encode(self) -> bytes:
        return encode_chain(self.config, self.blocks)


def build_random_chain(provider: Provider, n_blocks: int, txs_per_block: int, seed: int = 0) -> ChainBuilder:
    rng = random.Random(seed)
    cb = ChainBuilder(provider)
    for _ in range(n_blocks):
        pending = cb.start_block()
        attempts = 0
        while len(pending) < txs_per_block + 1 and attempts < 500:
            attempts += 1
            cb.try_add(pending, cb.random_tx(rng))
        cb.seal(pending)
    return cb


class Cluster:
    """Synchronous in-process network of full (and optionally light) nodes.

    Messages travel as encoded bytes and are delivered in FIFO order at the
    sender's timestamp. Every delivery is logged per node so inboxes can be
    replayed.
    """

    def __init__(self, provider: Provider, n_full: int = 4, n_light: int = 0, balance: int = 100,
                 round_ms: int = 1000, anchors_for_light=None):
        from dronechain.node import FullNode, Identity, LightNode
        from dronechain.node.full import make_validators

        self.provider = provider
        self.identities = [
            Identity(f"v{i}", *keys(provider, f"cluster-{i}", 2)) for i in range(n_full + n_light)
        ]
        full_ids = self.identities[:n_full]
        self.config = ChainConfig(provider.name, tuple(i.account.public_key for i in full_ids), FeeParams())
        self.genesis = make_genesis(provider, [(i.account.public_key, balance) for i in self.identities])
        self.full = [FullNode(i, self.config, self.genesis, provider, round_ms=round_ms) for i in full_ids]
        make_validators(self.full)
        anchors = anchors_for_light or [full_ids[0].account.public_key]
        self.light = [
            LightNode(i, self.config, self.genesis, provider, peers=[full_ids[0].account.public_key], anchors=anchors)
            for i in self.identities[n_full:]
        ]
        self.by_key = {n.key: n for n in self.full + self.light}
        self.down: set[bytes] = set()
        self.inbox: dict[bytes, list] = {k: [] for k in self.by_key}
        self.round_ms = round_ms

    def deliver(self, envelopes, sender: bytes, now: int) -> None:
        queue = [(env, sender) for env in envelopes]
        while queue:
            env, src = queue.pop(0)
            if env.to in self.down or env.to not in self.by_key:
                continue
            raw = env.encode()
            self.inbox[env.to].append(("recv", raw, src, now))
            out = self.by_key[env.to].receive(raw, src, now)
            queue += [(e, env.to) for e in out]

    def run_rounds(self, rounds: int, start: int = 0) -> list[list[int]]:
        heights = []
        for r in range(start, start + rounds):
            for phase in (0, self.round_ms // 2):
                now = r * self.round_ms + phase
                for node in self.full:
                    if node.key not in self.down:
                        self.inbox[node.key].append(("step", now))
                        self.deliver(node.consensus_step(now), node.key, now)
            heights.append([n.height for n in self.full])
        return heights

    def replay(self, node):
        """Feed a fresh copy of ``node`` its logged inbox and timer steps."""
        from dronechain.node import FullNode

        fresh = FullNode(node.identity, self.config, self.genesis, self.provider, round_ms=self.round_ms)
        fresh.full_peers = node.full_peers
        for kind, *args in self.inbox[node.key]:
            if kind == "step":
                fresh.consensus_step(*args)
            elif kind == "submit":
                fresh.submit_transaction(*args)
            else:
                fresh.receive(*args)
        return fresh

    def submit(self, node, tx, now: int = 0) -> None:
        out = node.submit_transaction(tx, now)
        self.inbox[node.key].append(("submit", tx, now))
        self.deliver(out, node.key, now)
