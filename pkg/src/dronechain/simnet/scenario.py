"""Scenario files: JSON schema validation, semantic checks, fault injection."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from ..state import FeeParams
from ..trust_graph import DEFAULT_GLOBAL_CAP

SCHEMA_VERSION = 1
NODE_ACTIONS = ("register", "revoke_entity", "refresh", "crash", "recover")


class ScenarioError(ValueError):
    """Schema or semantic violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@lru_cache(maxsize=1)
def load_schema() -> dict:
    text = resources.files(__package__).joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def _path(parts) -> str:
    return "/".join(str(p) for p in parts)


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    latency: tuple[int, int]
    loss: float


@dataclass(frozen=True)
class NodeSpec:
    name: str
    role: str
    entity_type: str
    behavior: str


@dataclass
class Scenario:
    name: str
    seed: int
    duration_ms: int
    provider: str
    round_ms: int
    global_cap: int
    auth_ttl_ms: int
    refresh_ms: int
    fees: FeeParams
    balances: dict[str, int]
    validators: list[str]
    anchors: dict[str, list[str]]
    nodes: list[NodeSpec]
    links: list[LinkSpec]
    workload: list[dict]
    raw: dict = field(repr=False, default_factory=dict)

    def node(self, name: str) -> NodeSpec:
        return next(n for n in self.nodes if n.name == name)


def validate_scenario(doc: Any) -> None:
    if not isinstance(doc, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    if "schema_version" not in doc:
        raise ScenarioError("schema_version", "required field is missing")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ScenarioError(_path(err.absolute_path), err.message)
    _check_semantics(doc)


def _check_semantics(doc: dict) -> None:
    topo = doc["topology"]
    names = [n["name"] for n in topo["nodes"]]
    roles = {n["name"]: n["role"] for n in topo["nodes"]}
    seen = set()
    for i, name in enumerate(names):
        if name in seen:
            raise ScenarioError(f"topology/nodes/{i}/name", f"duplicate node name {name!r}")
        seen.add(name)

    def need(name: str, path: str) -> None:
        if name not in roles:
            raise ScenarioError(path, f"unknown node {name!r}")

    fulls = [n for n in names if roles[n] == "full"]
    if not fulls:
        raise ScenarioError("topology/nodes", "at least one full node is required")
    links = set()
    for i, link in enumerate(topo["links"]):
        need(link["a"], f"topology/links/{i}/a")
        need(link["b"], f"topology/links/{i}/b")
        if link["a"] == link["b"]:
            raise ScenarioError(f"topology/links/{i}", "self-links are not allowed")
        pair = frozenset((link["a"], link["b"]))
        if pair in links:
            raise ScenarioError(f"topology/links/{i}", "duplicate link")
        links.add(pair)
        lat = link.get("latency", {"fixed": 0})
        if "uniform" in lat and lat["uniform"][0] > lat["uniform"][1]:
            raise ScenarioError(f"topology/links/{i}/latency/uniform", "min exceeds max")

    genesis = doc["genesis"]
    for name in genesis["balances"]:
        need(name, f"genesis/balances/{name}")
    validators = genesis.get("validators", fulls)
    for i, name in enumerate(validators):
        need(name, f"genesis/validators/{i}")
    if sorted(validators) != sorted(fulls):
        raise ScenarioError("genesis/validators", "every full node must be a validator, and only full nodes")
    for owner, anchor_names in genesis.get("anchors", {}).items():
        need(owner, f"genesis/anchors/{owner}")
        for j, name in enumerate(anchor_names):
            need(name, f"genesis/anchors/{owner}/{j}")

    duration = doc["duration_ms"]
    for i, act in enumerate(doc.get("workload", [])):
        base = f"workload/{i}"
        if act["at"] > duration:
            raise ScenarioError(f"{base}/at", f"time {act['at']} is beyond duration {duration}")
        rep = act.get("repeat")
        if rep and act["at"] + (rep["count"] - 1) * rep["every_ms"] > duration:
            raise ScenarioError(f"{base}/repeat", "repetitions run past the scenario duration")
        for key in ("node", "subject", "to", "verifier", "target", "a", "b"):
            if key in act:
                need(act[key], f"{base}/{key}")
        if act["action"] in ("drop_link", "restore_link") and frozenset((act["a"], act["b"])) not in links:
            raise ScenarioError(base, f"no link between {act['a']!r} and {act['b']!r}")
        for g, group in enumerate(act.get("groups", [])):
            for j, name in enumerate(group):
                need(name, f"{base}/groups/{g}/{j}")


def parse_scenario(doc: dict, seed: int | None = None) -> Scenario:
    validate_scenario(doc)
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = seed
    genesis = doc["genesis"]
    topo = doc["topology"]
    fulls = [n["name"] for n in topo["nodes"] if n["role"] == "full"]
    links = []
    for link in topo["links"]:
        lat = link.get("latency", {"fixed": 0})
        bounds = (lat["fixed"], lat["fixed"]) if "fixed" in lat else tuple(lat["uniform"])
        links.append(LinkSpec(link["a"], link["b"], bounds, float(link.get("loss", 0.0))))
    nodes = [
        NodeSpec(
            n["name"],
            n["role"],
            n.get("entity_type", "GroundStation" if n["role"] == "full" else "Drone"),
            n.get("behavior", "honest"),
        )
        for n in topo["nodes"]
    ]
    return Scenario(
        name=doc.get("name", "scenario"),
        seed=doc["seed"],
        duration_ms=doc["duration_ms"],
        provider=genesis.get("provider", "ed-curve"),
        round_ms=genesis.get("round_ms", 1000),
        global_cap=genesis.get("global_cap", DEFAULT_GLOBAL_CAP),
        auth_ttl_ms=genesis.get("auth_ttl_ms", 5000),
        refresh_ms=genesis.get("refresh_ms", 2000),
        fees=FeeParams(**genesis.get("fees", {})),
        balances=dict(genesis["balances"]),
        validators=list(genesis.get("validators", fulls)),
        anchors={k: list(v) for k, v in genesis.get("anchors", {}).items()},
        nodes=nodes,
        links=links,
        workload=expand_workload(doc.get("workload", [])),
        raw=doc,
    )


def expand_workload(actions: list[dict]) -> list[dict]:
    """Unroll ``repeat`` blocks and order by time (stable on file order)."""
    out = []
    for order, act in enumerate(actions):
        rep = act.get("repeat", {"count": 1, "every_ms": 0})
        for k in range(rep["count"]):
            item = {key: value for key, value in act.items() if key != "repeat"}
            item["at"] = act["at"] + k * rep["every_ms"]
            out.append((item["at"], order, k, item))
    out.sort(key=lambda t: t[:3])
    return [t[3] for t in out]


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc}") from None
    return parse_scenario(doc, seed)


FAULTS = {
    "crash": ("node",),
    "recover": ("node",),
    "partition": ("groups",),
    "heal": (),
    "drop_link": ("a", "b"),
    "restore_link": ("a", "b"),
}


def inject_fault(doc: dict, fault: str, at: int, **params) -> dict:
    """Return a copy of the scenario document with one fault action appended."""
    if fault not in FAULTS:
        raise ScenarioError("workload", f"unknown fault {fault!r}")
    missing = [p for p in FAULTS[fault] if p not in params]
    if missing:
        raise ScenarioError("workload", f"fault {fault!r} needs {', '.join(missing)}")
    out = copy.deepcopy(doc)
    action = {"at": at, "action": fault, **params}
    out.setdefault("workload", []).append(action)
    validate_scenario(out)
    return out
