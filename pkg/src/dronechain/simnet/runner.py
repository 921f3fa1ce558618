"""Discrete-event simulation of ground stations (full nodes) and drones (light nodes)."""

from __future__ import annotations

import json
import random
import time
from collections import deque
from dataclasses import dataclass, field
from typing import IO

from ..auth import AuthReason
from ..chainfile import ChainConfig
from ..crypto import CountingProvider, derive_seed, get_provider
from ..ledger import (
    Confirmation,
    EntityType,
    Revocation,
    RevokeEntity,
    TokenTransfer,
    make_entity,
    make_genesis,
    sign_transaction,
)
from ..node import AuthEvent, CommitEvent, Envelope, FullNode, Identity, LightNode, NoPeer, RefreshEvent
from ..state import TxError
from .events import EventQueue
from .metrics import AUTH_REASONS, MetricsReport, latency_summary
from .scenario import Scenario

NO_PEER = "NoPeer"


class SimulationError(RuntimeError):
    """An event raised while being processed; names the time and event kind."""

    def __init__(self, time: int, event: str, cause: Exception):
        super().__init__(f"t={time} event={event}: {type(cause).__name__}: {cause}")
        self.time = time
        self.event = event
        self.cause = cause


@dataclass
class Attempt:
    attempt_id: int
    at: int
    verifier: str
    target: str
    honest_target: bool
    reason: str | None = None
    decided_at: int | None = None


@dataclass
class NodeStats:
    messages_sent: int = 0
    bytes_sent: int = 0


@dataclass
class _Link:
    a: str
    b: str
    latency: tuple[int, int]
    loss: float
    loss_rng: random.Random = field(repr=False, default=None)
    latency_rng: random.Random = field(repr=False, default=None)
    up: bool = True


def _rng(master: int, *label) -> random.Random:
    return random.Random(int.from_bytes(derive_seed(master, *label)[:8], "big"))


class Simulation:
    def __init__(self, scenario: Scenario, provider_name: str | None = None, trace: IO[str] | None = None):
        self.scenario = sc = scenario
        self.provider_name = provider_name or sc.provider
        base = get_provider(self.provider_name)
        self.base_provider = base
        self.trace = trace
        self.queue = EventQueue()
        self.now = 0

        self.identities: dict[str, Identity] = {}
        for spec in sc.nodes:
            self.identities[spec.name] = Identity(
                spec.name,
                base.generate_keypair(derive_seed(sc.seed, "account", spec.name)),
                base.generate_keypair(derive_seed(sc.seed, "auth", spec.name)),
                spec.behavior,
            )
        self.key_to_name = {i.account.public_key: n for n, i in self.identities.items()}
        validators = tuple(self.identities[v].account.public_key for v in sc.validators)
        self.chain_config = ChainConfig(self.provider_name, validators, sc.fees)
        allocations = [(self.identities[n].account.public_key, amt) for n, amt in sc.balances.items()]
        self.genesis = make_genesis(base, allocations)

        self.links: dict[frozenset, _Link] = {}
        for spec in sc.links:
            link = _Link(spec.a, spec.b, spec.latency, spec.loss)
            a, b = sorted((spec.a, spec.b))
            link.loss_rng = _rng(sc.seed, "link", a, b, "loss")
            link.latency_rng = _rng(sc.seed, "link", a, b, "latency")
            self.links[frozenset((spec.a, spec.b))] = link
        self.partition: dict[str, int] | None = None

        self.nodes: dict[str, FullNode | LightNode] = {}
        self.crashed: set[str] = set()
        self.stats = {spec.name: NodeStats() for spec in sc.nodes}
        self.seq = {spec.name: 0 for spec in sc.nodes}
        for spec in sc.nodes:
            self.nodes[spec.name] = self._make_node(spec)

        # Every hop transmission ends up forwarded, delivered, lost, dropped
        # (arrived at a crashed node) or still in flight at the horizon.
        self.msg_counts = {"sent": 0, "delivered": 0, "forwarded": 0, "lost": 0, "dropped": 0, "unroutable": 0, "local": 0}
        self.attempts: dict[int, Attempt] = {}
        self.tx_submitted: dict[bytes, int] = {}
        self.tx_log: list[dict] = []
        self.tx_committed: dict[bytes, int] = {}
        self.tx_rejected = 0
        self.commits: dict[int, bytes] = {}
        self.commit_times: dict[int, int] = {}
        self.safety_violations = 0
        self.refreshes = {"ok": 0, "failed": 0}

    # -- construction ------------------------------------------------------

    def _make_node(self, spec):
        sc = self.scenario
        identity = self.identities[spec.name]
        anchors = [self.identities[a].account.public_key for a in sc.anchors.get(spec.name, [])]
        provider = CountingProvider(self.base_provider)
        common = dict(
            anchors=anchors,
            global_cap=sc.global_cap,
            auth_ttl=sc.auth_ttl_ms,
            nonce_seed=int.from_bytes(derive_seed(sc.seed, "nonce", spec.name)[:8], "big"),
        )
        if spec.role == "full":
            return FullNode(identity, self.chain_config, self.genesis, provider, round_ms=sc.round_ms, **common)
        peers = [self.identities[n].account.public_key for n in self._full_nodes_by_distance(spec.name)]
        return LightNode(identity, self.chain_config, self.genesis, provider, peers=peers, **common)

    def _full_nodes_by_distance(self, origin: str) -> list[str]:
        dist = self._hop_distances(origin, static=True)
        fulls = [n.name for n in self.scenario.nodes if n.role == "full" and n.name in dist]
        return sorted(fulls, key=lambda n: (dist[n], n))

    # -- topology ----------------------------------------------------------

    def _link_up(self, a: str, b: str, link: _Link) -> bool:
        if not link.up:
            return False
        if self.partition is not None and self.partition.get(a, -1) != self.partition.get(b, -1):
            return False
        return True

    def _neighbors(self, name: str, static: bool = False) -> list[str]:
        out = []
        for pair, link in self.links.items():
            if name in pair:
                other = link.b if link.a == name else link.a
                if static or self._link_up(name, other, link):
                    out.append(other)
        return sorted(out)

    def _hop_distances(self, origin: str, static: bool = False) -> dict[str, int]:
        dist = {origin: 0}
        frontier = deque([origin])
        while frontier:
            cur = frontier.popleft()
            for nxt in self._neighbors(cur, static):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    frontier.append(nxt)
        return dist

    def _next_hop(self, src: str, dst: str) -> str | None:
        dist = self._hop_distances(dst)
        if src not in dist:
            return None
        options = [n for n in self._neighbors(src) if dist.get(n, 1 << 30) == dist[src] - 1]
        return options[0] if options else None

    def reachable(self, src: str, dst: str) -> bool:
        return dst in self._hop_distances(src)

    # -- messaging ---------------------------------------------------------

    def _emit(self, origin: str, envelopes: list[Envelope]) -> None:
        for env in envelopes:
            dst = self.key_to_name.get(env.to)
            if dst is None:
                self.msg_counts["unroutable"] += 1
                continue
            raw = env.encode()
            if dst == origin:
                self.msg_counts["local"] += 1
                self._dispatch(dst, raw, origin)
                continue
            self._transmit(origin, origin, dst, raw)

    def _transmit(self, hop_from: str, origin: str, dst: str, raw: bytes) -> None:
        nh = self._next_hop(hop_from, dst)
        if nh is None:
            self.msg_counts["unroutable"] += 1
            self._log("drop", src=hop_from, dst=dst, why="no-route")
            return
        link = self.links[frozenset((hop_from, nh))]
        self.msg_counts["sent"] += 1
        stats = self.stats[hop_from]
        stats.messages_sent += 1
        stats.bytes_sent += len(raw)
        if link.loss > 0 and link.loss_rng.random() < link.loss:
            self.msg_counts["lost"] += 1
            self._log("lost", src=hop_from, dst=nh)
            return
        lo, hi = link.latency
        delay = lo if lo == hi else link.latency_rng.randint(lo, hi)
        self.queue.push(self.now + delay, ("hop", nh, origin, dst, raw))

    def _dispatch(self, name: str, raw: bytes, origin: str) -> None:
        node = self.nodes[name]
        out = node.receive(raw, self.identities[origin].account.public_key, self.now)
        self._emit(name, out)
        self._collect(name)

    # -- event handling ----------------------------------------------------

    def _schedule_initial(self) -> None:
        sc = self.scenario
        # Scripted actions go first so a fault at time t precedes the round step at t.
        for idx, action in enumerate(sc.workload):
            self.queue.push(action["at"], ("action", idx, action))
        for spec in sc.nodes:
            if spec.role == "full":
                self.queue.push(0, ("tick", spec.name))
            else:
                self.queue.push(sc.refresh_ms, ("refresh_tick", spec.name))

    def run(self) -> MetricsReport:
        started = time.perf_counter()
        self._schedule_initial()
        duration = self.scenario.duration_ms
        while self.queue and self.queue.peek_time() <= duration:
            self.now, event = self.queue.pop()
            try:
                self._step(event)
            except Exception as exc:
                raise SimulationError(self.now, _describe(event), exc) from exc
        for attempt in self.attempts.values():
            if attempt.reason is None:
                # Unresolved at the horizon: count as a timeout.
                attempt.reason = AuthReason.EXPIRED.value
        report = self._report()
        report.running_time_s = round(time.perf_counter() - started, 6)
        return report

    def _step(self, event) -> None:
        kind = event[0]
        if kind == "hop":
            _, name, origin, dst, raw = event
            if name in self.crashed:
                self.msg_counts["dropped"] += 1
                return
            if name != dst:
                self.msg_counts["forwarded"] += 1
                self._transmit(name, origin, dst, raw)
                return
            self.msg_counts["delivered"] += 1
            self._log("deliver", src=origin, dst=dst, size=len(raw), tag=raw[0])
            self._dispatch(name, raw, origin)
        elif kind == "tick":
            name = event[1]
            half = self.scenario.round_ms // 2
            nxt = self.now + half if self.now % self.scenario.round_ms == 0 else self.now - half + self.scenario.round_ms
            self.queue.push(nxt, ("tick", name))
            if name not in self.crashed:
                self._emit(name, self.nodes[name].consensus_step(self.now))
                self._collect(name)
        elif kind == "refresh_tick":
            name = event[1]
            self.queue.push(self.now + self.scenario.refresh_ms, ("refresh_tick", name))
            if name not in self.crashed:
                self._refresh(name)
        elif kind == "action":
            self._log("action", **{k: v for k, v in event[2].items() if k != "at"})
            self._do_action(event[1], event[2])
        elif kind == "auth_timeout":
            _, name, attempt_id = event
            node = self.nodes[name]
            if name not in self.crashed:
                node.auth_timeout(attempt_id, self.now)
                self._collect(name)
            attempt = self.attempts[attempt_id]
            if attempt.reason is None:
                attempt.reason = AuthReason.EXPIRED.value
                attempt.decided_at = self.now

    def _refresh(self, name: str) -> None:
        node = self.nodes[name]
        try:
            out = node.refresh_request(self.now)
        except NoPeer:
            self.refreshes["failed"] += 1
            return
        self._emit(name, out)

    def _collect(self, name: str) -> None:
        for ev in self.nodes[name].drain_events():
            if isinstance(ev, CommitEvent):
                first = self.commits.setdefault(ev.height, ev.digest)
                if first != ev.digest:
                    self.safety_violations += 1
                self.commit_times.setdefault(ev.height, ev.time)
                for tx_id in ev.tx_ids:
                    if tx_id in self.tx_submitted:
                        self.tx_committed.setdefault(tx_id, ev.time)
                self._log("commit", node=name, height=ev.height, digest=ev.digest.hex())
            elif isinstance(ev, AuthEvent):
                attempt = self.attempts.get(ev.attempt_id)
                if attempt is not None and attempt.reason is None:
                    attempt.reason = ev.decision.reason.value
                    attempt.decided_at = ev.time
                    self._log("auth", attempt=ev.attempt_id, reason=attempt.reason)
            elif isinstance(ev, RefreshEvent):
                self.refreshes["ok" if ev.ok else "failed"] += 1

    # -- workload ----------------------------------------------------------

    def _do_action(self, idx: int, act: dict) -> None:
        kind = act["action"]
        if kind == "auth":
            self._start_auth(idx, act["verifier"], act["target"])
        elif kind in ("register", "confirm", "revoke", "revoke_entity", "transfer"):
            self._submit(act)
        elif kind == "refresh":
            if act["node"] not in self.crashed and self.nodes[act["node"]].role == "light":
                self._refresh(act["node"])
        elif kind == "crash":
            self.crashed.add(act["node"])
        elif kind == "recover":
            name = act["node"]
            if name in self.crashed:
                self.crashed.discard(name)
                self.nodes[name].restart()
        elif kind == "partition":
            self.partition = {n: g for g, group in enumerate(act["groups"]) for n in group}
        elif kind == "heal":
            self.partition = None
        elif kind == "drop_link":
            self.links[frozenset((act["a"], act["b"]))].up = False
        elif kind == "restore_link":
            self.links[frozenset((act["a"], act["b"]))].up = True

    def _build_tx(self, act: dict):
        name = act["node"]
        ident = self.identities[name]
        fee = self.scenario.fees.tx_fee
        seq = self.seq[name]
        kind = act["action"]
        key = lambda n: self.identities[n].account.public_key  # noqa: E731
        if kind == "register":
            etype = EntityType[_ENTITY_TYPES[self.scenario.node(name).entity_type]]
            return make_entity(self.base_provider, ident.account, ident.auth, name, etype, seq, fee)
        if kind == "confirm":
            payload = Confirmation(key(act["subject"]), act["max_path_len"])
        elif kind == "revoke":
            payload = Revocation(key(act["subject"]))
        elif kind == "revoke_entity":
            payload = RevokeEntity()
        else:
            payload = TokenTransfer(key(act["to"]), act["amount"])
        return sign_transaction(self.base_provider, ident.account, seq, fee, payload)

    def _submit(self, act: dict) -> None:
        name = act["node"]
        if name in self.crashed:
            self.tx_rejected += 1
            return
        tx = self._build_tx(act)
        node = self.nodes[name]
        try:
            out = node.submit_transaction(tx, self.now)
        except (TxError, NoPeer) as exc:
            self.tx_rejected += 1
            self._log("tx_rejected", node=name, why=str(exc))
            return
        self.seq[name] += 1
        tx_id = tx.id(self.base_provider)
        self.tx_submitted.setdefault(tx_id, self.now)
        self.tx_log.append({"id": tx_id, "node": name, "action": act["action"], "at": self.now})
        self._emit(name, out)
        self._collect(name)

    def _start_auth(self, idx: int, verifier: str, target: str) -> None:
        attempt_id = len(self.attempts)
        honest = self.scenario.node(target).behavior == "honest"
        attempt = Attempt(attempt_id, self.now, verifier, target, honest)
        self.attempts[attempt_id] = attempt
        if verifier in self.crashed or not self.reachable(verifier, target):
            attempt.reason = NO_PEER
            attempt.decided_at = self.now
            return
        node = self.nodes[verifier]
        out = node.start_auth(self.identities[target].account.public_key, self.now, attempt_id)
        self.queue.push(self.now + self.scenario.auth_ttl_ms + 1, ("auth_timeout", verifier, attempt_id))
        self._emit(verifier, out)
        self._collect(verifier)

    # -- reporting ---------------------------------------------------------

    def _log(self, kind: str, **fields) -> None:
        if self.trace is not None:
            self.trace.write(json.dumps({"t": self.now, "event": kind, **fields}, sort_keys=True) + "\n")

    def _report(self) -> MetricsReport:
        sc = self.scenario
        attempts = list(self.attempts.values())
        by_reason = {r: 0 for r in AUTH_REASONS[1:]}
        confusion = {"honest_accepted": 0, "honest_rejected": 0, "attacker_accepted": 0, "attacker_rejected": 0}
        latencies = []
        for a in attempts:
            ok = a.reason == AuthReason.OK.value
            if not ok:
                by_reason[a.reason] += 1
            confusion[f"{'honest' if a.honest_target else 'attacker'}_{'accepted' if ok else 'rejected'}"] += 1
            if a.decided_at is not None and a.reason not in (NO_PEER, AuthReason.EXPIRED.value):
                latencies.append(a.decided_at - a.at)
        accepted = sum(1 for a in attempts if a.reason == AuthReason.OK.value)
        auth = {
            "attempts": len(attempts),
            "accepted": accepted,
            "rejected_by_reason": by_reason,
            "probability_of_authentication": (accepted / len(attempts)) if attempts else None,
            "latency_ms": latency_summary(latencies),
            "confusion": confusion,
        }
        auth_log = [
            {
                "id": a.attempt_id,
                "at": a.at,
                "verifier": a.verifier,
                "target": a.target,
                "reason": a.reason,
                "latency_ms": None if a.decided_at is None else a.decided_at - a.at,
            }
            for a in attempts
        ]
        commit_lat = [self.tx_committed[t] - s for t, s in self.tx_submitted.items() if t in self.tx_committed]
        tx = {
            "submitted": len(self.tx_submitted),
            "committed": len(self.tx_committed),
            "rejected": self.tx_rejected,
            "commit_latency_ms": latency_summary(commit_lat),
            "log": [
                {
                    "node": e["node"],
                    "action": e["action"],
                    "at": e["at"],
                    "committed_at": self.tx_committed.get(e["id"]),
                }
                for e in self.tx_log
            ],
        }
        in_flight = sum(1 for ev in self.queue.pending() if ev[0] == "hop")
        messages = {**self.msg_counts, "in_flight": in_flight}
        messages["malformed"] = sum(n.counters.malformed for n in self.nodes.values())
        per_node = {}
        for name, node in self.nodes.items():
            prov = node.provider
            per_node[name] = {
                "role": node.role,
                "height": node.height,
                "crashed": name in self.crashed,
                "messages_sent": self.stats[name].messages_sent,
                "bytes_sent": self.stats[name].bytes_sent,
                "signatures_created": prov.signatures_created,
                "signatures_verified": prov.signatures_verified,
                "hashes_computed": prov.hashes,
                "malformed": node.counters.malformed,
            }
            if node.role == "full":
                per_node[name]["state_digest"] = node.state_digest().hex()
                per_node[name]["invalid_proposals"] = node.counters.invalid_proposals
            else:
                per_node[name]["view_nodes"] = len(node.local_view.nodes)
                per_node[name]["view_edges"] = len(node.local_view.edges)
        energy = {
            key: sum(p[key] for p in per_node.values())
            for key in ("messages_sent", "bytes_sent", "signatures_created", "signatures_verified", "hashes_computed")
        }
        chain = {
            "heights": {n: self.nodes[n].height for n in self.nodes},
            "commit_times_ms": [self.commit_times[h] for h in sorted(self.commit_times)],
            "safety_violations": self.safety_violations,
            "refreshes": dict(self.refreshes),
        }
        return MetricsReport(
            scenario=sc.name,
            seed=sc.seed,
            duration_ms=sc.duration_ms,
            auth=auth,
            auth_log=auth_log,
            tx=tx,
            messages=messages,
            energy=energy,
            chain=chain,
            per_node=per_node,
            extra={"provider": self.provider_name, "round_ms": sc.round_ms},
        )


def _describe(event) -> str:
    if event[0] == "action":
        act = event[2]
        return f"workload[{event[1]}] {act['action']}"
    if event[0] == "hop":
        return f"deliver to {event[1]}"
    return f"{event[0]} {event[1]}"


_ENTITY_TYPES = {"Drone": "DRONE", "GroundStation": "GROUND_STATION", "Other": "OTHER"}


def run_scenario(scenario: Scenario, provider: str | None = None, trace: IO[str] | None = None) -> MetricsReport:
    return Simulation(scenario, provider, trace).run()
