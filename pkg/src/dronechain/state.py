"""Account and token state machine.

Every transition is all-or-nothing: ``apply_transaction`` either returns a
new ``LedgerState`` or raises ``TxError`` and the input state is untouched.
Fees are burned; coinbase transactions mint the block reward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping

from .codec import Writer
from .crypto import Provider
from .ledger import (
    Block,
    Coinbase,
    Confirmation,
    Entity,
    Revocation,
    RevokeEntity,
    TokenTransfer,
    Transaction,
)
from .trust_graph import EntityRecord, TrustGraph


@dataclass(frozen=True)
class FeeParams:
    tx_fee: int = 1
    entity_reserve: int = 5
    confirmation_reserve: int = 5
    block_reward: int = 10

    def encode(self, w: Writer) -> None:
        w.u64(self.tx_fee).u64(self.entity_reserve)
        w.u64(self.confirmation_reserve).u64(self.block_reward)


class TxErrorKind(str, enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    BAD_SEQ = "BadSeq"
    INSUFFICIENT_BALANCE = "InsufficientBalance"
    DUPLICATE_ENTITY = "DuplicateEntity"
    NO_ENTITY = "NoEntity"
    UNKNOWN_SUBJECT = "UnknownSubject"
    NO_SUCH_EDGE = "NoSuchEdge"
    SELF_CONFIRMATION = "SelfConfirmation"
    BAD_POSSESSION_PROOF = "BadPossessionProof"


class TxError(Exception):
    def __init__(self, kind: TxErrorKind, detail: str = ""):
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)
        self.kind = kind


class BlockApplyError(Exception):
    """Block-level failure; ``index`` is the offending transaction position."""

    def __init__(self, message: str, index: int | None = None, cause: TxError | None = None):
        super().__init__(message)
        self.index = index
        self.cause = cause


class InvalidCoinbasePosition(BlockApplyError):
    pass


@dataclass(frozen=True)
class AccountState:
    balance: int = 0
    reserved_entity: int = 0
    reserved_confirmations: Mapping[bytes, int] = field(default_factory=dict)
    has_entity: bool = False
    seq: int = 0

    __hash__ = None  # type: ignore[assignment]

    @property
    def total_reserved(self) -> int:
        return self.reserved_entity + sum(self.reserved_confirmations.values())


EMPTY_ACCOUNT = AccountState()


@dataclass(frozen=True)
class LedgerState:
    accounts: Mapping[bytes, AccountState] = field(default_factory=dict)
    graph: TrustGraph = field(default_factory=TrustGraph)
    total_minted: int = 0
    total_burned_fees: int = 0

    __hash__ = None  # type: ignore[assignment]

    def account(self, key: bytes) -> AccountState:
        return self.accounts.get(key, EMPTY_ACCOUNT)

    def total_held(self) -> int:
        return sum(a.balance + a.total_reserved for a in self.accounts.values())

    def conserved(self) -> bool:
        return self.total_held() == self.total_minted - self.total_burned_fees

    def encode(self) -> bytes:
        w = Writer()
        w.u32(len(self.accounts))
        for key in sorted(self.accounts):
            acct = self.accounts[key]
            w.bytes(key).u64(acct.balance).u64(acct.reserved_entity)
            w.u8(int(acct.has_entity)).u64(acct.seq)
            w.u32(len(acct.reserved_confirmations))
            for subject in sorted(acct.reserved_confirmations):
                w.bytes(subject).u64(acct.reserved_confirmations[subject])
        w.u32(len(self.graph.nodes))
        for key in sorted(self.graph.nodes):
            rec = self.graph.nodes[key]
            w.bytes(key).bytes(rec.auth_public_key).str(rec.identity_name).u8(int(rec.entity_type))
        w.u32(len(self.graph.edges))
        for (src, dst) in sorted(self.graph.edges):
            w.bytes(src).bytes(dst).u8(self.graph.edges[(src, dst)])
        w.u64(self.total_minted).u64(self.total_burned_fees)
        return w.getvalue()

    def digest(self, provider: Provider) -> bytes:
        return provider.hash(self.encode())


class _Draft:
    """Mutable working copy used inside a single transaction."""

    def __init__(self, state: LedgerState):
        self.accounts = dict(state.accounts)
        self.graph = state.graph
        self.minted = state.total_minted
        self.burned = state.total_burned_fees

    def get(self, key: bytes) -> AccountState:
        return self.accounts.get(key, EMPTY_ACCOUNT)

    def put(self, key: bytes, acct: AccountState) -> None:
        self.accounts[key] = acct

    def freeze(self) -> LedgerState:
        return LedgerState(self.accounts, self.graph, self.minted, self.burned)


def _debit(acct: AccountState, amount: int, what: str) -> AccountState:
    if acct.balance < amount:
        raise TxError(TxErrorKind.INSUFFICIENT_BALANCE, f"{what} needs {amount}, has {acct.balance}")
    return replace(acct, balance=acct.balance - amount)


def _check_envelope(provider: Provider, state: LedgerState, tx: Transaction) -> AccountState:
    if tx.is_coinbase or not tx.signature_valid(provider):
        raise TxError(TxErrorKind.BAD_SIGNATURE)
    sender = state.account(tx.sender)
    if tx.seq != sender.seq:
        raise TxError(TxErrorKind.BAD_SEQ, f"expected {sender.seq}, got {tx.seq}")
    return sender


def apply_transaction(
    provider: Provider, state: LedgerState, tx: Transaction, params: FeeParams
) -> LedgerState:
    if tx.is_coinbase:
        return _apply_coinbase(state, tx)
    sender = _check_envelope(provider, state, tx)
    draft = _Draft(state)
    p = tx.payload
    fee = tx.fee
    me = tx.sender

    if isinstance(p, TokenTransfer):
        sender = _debit(sender, p.amount + fee, "transfer")
        draft.put(me, replace(sender, seq=sender.seq + 1))
        recipient = draft.get(p.recipient)
        draft.put(p.recipient, replace(recipient, balance=recipient.balance + p.amount))

    elif isinstance(p, Entity):
        if sender.has_entity:
            raise TxError(TxErrorKind.DUPLICATE_ENTITY)
        if not p.auth_public_key or not provider.verify(p.auth_public_key, me, p.possession_sig):
            raise TxError(TxErrorKind.BAD_POSSESSION_PROOF)
        sender = _debit(sender, fee + params.entity_reserve, "entity")
        draft.put(
            me,
            replace(
                sender,
                reserved_entity=params.entity_reserve,
                has_entity=True,
                seq=sender.seq + 1,
            ),
        )
        draft.graph = draft.graph.add_node(
            EntityRecord(me, p.auth_public_key, p.identity_name, p.entity_type)
        )

    elif isinstance(p, RevokeEntity):
        if not sender.has_entity:
            raise TxError(TxErrorKind.NO_ENTITY)
        if sender.reserved_entity < fee:
            raise TxError(TxErrorKind.INSUFFICIENT_BALANCE, "fee exceeds entity reservation")
        # Reservations that other accounts hold on edges toward us go back in full.
        for owner, _ in draft.graph.in_edges(me):
            acct = draft.get(owner)
            held = dict(acct.reserved_confirmations)
            refund = held.pop(me)
            draft.put(owner, replace(acct, balance=acct.balance + refund, reserved_confirmations=held))
        own_refund = sum(sender.reserved_confirmations.values())
        draft.put(
            me,
            replace(
                sender,
                balance=sender.balance + own_refund + sender.reserved_entity - fee,
                reserved_entity=0,
                reserved_confirmations={},
                has_entity=False,
                seq=sender.seq + 1,
            ),
        )
        draft.graph = draft.graph.remove_node(me)

    elif isinstance(p, Confirmation):
        if p.subject == me:
            raise TxError(TxErrorKind.SELF_CONFIRMATION)
        if not sender.has_entity:
            raise TxError(TxErrorKind.NO_ENTITY)
        if not state.account(p.subject).has_entity:
            raise TxError(TxErrorKind.UNKNOWN_SUBJECT)
        held = dict(sender.reserved_confirmations)
        if (me, p.subject) in draft.graph.edges:
            sender = _debit(sender, fee, "confirmation update")
        else:
            sender = _debit(sender, fee + params.confirmation_reserve, "confirmation")
            held[p.subject] = params.confirmation_reserve
        draft.put(me, replace(sender, reserved_confirmations=held, seq=sender.seq + 1))
        draft.graph = draft.graph.set_edge(me, p.subject, p.max_path_len)

    elif isinstance(p, Revocation):
        if (me, p.subject) not in draft.graph.edges:
            raise TxError(TxErrorKind.NO_SUCH_EDGE)
        held = dict(sender.reserved_confirmations)
        reserved = held.pop(p.subject)
        if reserved < fee:
            raise TxError(TxErrorKind.INSUFFICIENT_BALANCE, "fee exceeds edge reservation")
        draft.put(
            me,
            replace(
                sender,
                balance=sender.balance + reserved - fee,
                reserved_confirmations=held,
                seq=sender.seq + 1,
            ),
        )
        draft.graph = draft.graph.remove_edge(me, p.subject)

    else:  # pragma: no cover - decode rejects unknown tags
        raise TypeError(f"unsupported payload {type(p).__name__}")

    draft.burned += fee
    return draft.freeze()


def _apply_coinbase(state: LedgerState, tx: Transaction) -> LedgerState:
    p = tx.payload
    assert isinstance(p, Coinbase)
    if tx.fee != 0:
        raise TxError(TxErrorKind.BAD_SIGNATURE, "coinbase must carry no fee")
    draft = _Draft(state)
    acct = draft.get(p.recipient)
    draft.put(p.recipient, replace(acct, balance=acct.balance + p.amount))
    draft.minted += p.amount
    return draft.freeze()


def validate_candidate(
    provider: Provider, state: LedgerState, tx: Transaction, params: FeeParams
) -> None:
    """Raise ``TxError`` unless ``tx`` would apply cleanly; never mutates ``state``."""
    if tx.is_coinbase:
        raise TxError(TxErrorKind.BAD_SIGNATURE, "coinbase transactions are not admissible")
    apply_transaction(provider, state, tx, params)


def apply_block(
    provider: Provider, state: LedgerState, block: Block, params: FeeParams
) -> LedgerState:
    txs = block.transactions
    if block.height == 0:
        for i, tx in enumerate(txs):
            if not tx.is_coinbase:
                raise InvalidCoinbasePosition("genesis may only hold coinbase allocations", i)
            state = _apply_coinbase(state, tx)
        return state
    if not txs or not txs[0].is_coinbase:
        raise InvalidCoinbasePosition("first transaction must be the coinbase", 0)
    coinbase = txs[0]
    if coinbase.payload.amount != params.block_reward or coinbase.seq != block.height:
        raise InvalidCoinbasePosition("coinbase does not pay the block reward", 0)
    state = _apply_coinbase(state, coinbase)
    for i, tx in enumerate(txs[1:], start=1):
        if tx.is_coinbase:
            raise InvalidCoinbasePosition("coinbase after the first position", i)
        try:
            state = apply_transaction(provider, state, tx, params)
        except TxError as exc:
            raise BlockApplyError(f"transaction {i} rejected: {exc}", i, exc) from exc
    return state


def genesis_state(provider: Provider, genesis: Block) -> LedgerState:
    return apply_block(provider, LedgerState(), genesis, FeeParams())
