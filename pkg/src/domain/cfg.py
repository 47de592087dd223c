# src/domain/cfg.py
"""Control-flow graph of a function body and registration facts."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Set, Tuple

import networkx as nx

from .ast import Stmt
from .value_objects import SourceLocation


@dataclass
class BasicBlock:
    """Maximal run of statements executed in sequence."""
    id: int
    statements: List[Stmt] = field(default_factory=list)


class FactKind(Enum):
    PRAGMA_REGISTER = "pragma_register"
    REGISTERED_ATTRIBUTE = "registered_attribute"
    UNREGISTER = "unregister"


@dataclass(frozen=True)
class RegFact:
    """Registration (or unregistration) of a variable's region at a site."""
    variable: str
    site: SourceLocation
    kind: FactKind

    @property
    def kills(self) -> bool:
        return self.kind is FactKind.UNREGISTER


@dataclass
class CFG:
    """Blocks are graph nodes (block id -> `block` attribute)."""
    graph: nx.DiGraph
    entry: int
    idom: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.entry not in self.graph:
            raise ValueError("Entry block is not part of the graph")
        if not self.idom:
            self.idom = dict(nx.immediate_dominators(self.graph, self.entry))
            # Some networkx releases leave the start node out.
            self.idom[self.entry] = self.entry

    @property
    def blocks(self) -> List[BasicBlock]:
        return [self.graph.nodes[n]["block"] for n in sorted(self.graph.nodes)]

    def block(self, block_id: int) -> BasicBlock:
        return self.graph.nodes[block_id]["block"]

    @property
    def reachable(self) -> Set[int]:
        return set(self.idom)

    def dominates(self, a: int, b: int) -> bool:
        """Whether every path from the entry to `b` passes through `a`."""
        if b not in self.idom:
            return False
        node = b
        while True:
            if node == a:
                return True
            parent = self.idom[node]
            if parent == node:
                return False
            node = parent

    def back_edges(self) -> List[Tuple[int, int]]:
        reachable = self.reachable
        return sorted(
            (u, v) for u, v in self.graph.edges
            if u in reachable and v in reachable and self.dominates(v, u)
        )

    def acyclic(self) -> nx.DiGraph:
        """Reachable part of the graph with back edges removed."""
        dag = self.graph.subgraph(self.reachable).copy()
        dag.remove_edges_from(self.back_edges())
        return dag
