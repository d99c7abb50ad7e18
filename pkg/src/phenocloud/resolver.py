"""Install-order resolution: dependencies first, no duplicates, no cycles."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from phenocloud.catalog import Catalog, ResolvedApp, effective_version
from phenocloud.errors import CycleError, DanglingDependencyError, NotFoundError


@dataclass(frozen=True)
class InstallPlan:
    steps: tuple  # ResolvedApp, dependencies always before dependents

    def names(self):
        return [s.name for s in self.steps]


def _default_version(catalog: Catalog, name: str) -> str:
    # Dependencies carry no version; pick the greatest version key as "latest".
    return max(catalog[name].versions)


def _select_versions(catalog: Catalog, request: dict) -> dict:
    """Map every app in the transitive closure of the request to a version.

    Explicitly requested versions win over the default-version rule.
    """
    selected = {}
    for name, version_key in request.items():
        if name not in catalog:
            raise NotFoundError(f"requested application {name!r} not in catalog")
        if version_key not in catalog[name].versions:
            raise NotFoundError(
                f"requested version {version_key!r} of {name!r} does not exist"
            )
        selected[name] = version_key

    stack = list(selected)
    while stack:
        name = stack.pop()
        resolved = effective_version(catalog, name, selected[name])
        for dep in resolved.dependencies:
            if dep not in catalog:
                raise DanglingDependencyError(
                    f"{name!r} depends on {dep!r}, which is not in the catalog"
                )
            if dep not in selected:
                selected[dep] = _default_version(catalog, dep)
                stack.append(dep)
    return selected


def _find_cycle(edges: dict, nodes) -> list:
    """Return one cycle path [a, b, ..., a] from a graph known to have one."""
    state = {}  # node -> 1 (on stack) | 2 (done)
    path = []

    def dfs(node):
        state[node] = 1
        path.append(node)
        for nxt in edges.get(node, ()):
            if state.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            if nxt not in state:
                found = dfs(nxt)
                if found:
                    return found
        path.pop()
        state[node] = 2
        return None

    for node in sorted(nodes):
        if node not in state:
            found = dfs(node)
            if found:
                return found
    raise AssertionError("no cycle found in graph claimed cyclic")


def resolve(catalog: Catalog, request: dict) -> InstallPlan:
    """Compute a deterministic install order for the requested applications.

    The plan contains the transitive dependency closure of the request,
    each application once, dependencies before dependents.  Among ready
    applications the one with the smallest name goes first, which makes
    the result independent of request key order.
    """
    selected = _select_versions(catalog, request)
    resolved = {
        name: effective_version(catalog, name, vk) for name, vk in selected.items()
    }
    edges = {name: tuple(resolved[name].dependencies) for name in resolved}

    pending = dict(edges)
    indegree = {name: len(deps) for name, deps in pending.items()}
    dependents = {name: [] for name in pending}
    for name, deps in pending.items():
        for dep in deps:
            dependents[dep].append(name)

    ready = [name for name, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    steps = []
    while ready:
        name = heapq.heappop(ready)
        steps.append(resolved[name])
        for dependent in dependents[name]:
            indegree[dependent] -= 1
            if indegree[dependent] == 0:
                heapq.heappush(ready, dependent)

    if len(steps) != len(pending):
        remaining = {n for n, d in indegree.items() if d > 0}
        raise CycleError(_find_cycle(edges, remaining))
    return InstallPlan(steps=tuple(steps))


def check_cycles(catalog: Catalog) -> list:
    """Return every elementary dependency cycle in the catalog.

    Cycles are reported as closed paths ([a, b, a]), each elementary
    cycle once, starting at its lexicographically smallest node.
    Empty list iff the catalog's dependency graph is acyclic.
    """
    edges = {name: sorted(set(catalog[name].dependencies)) for name in catalog}
    cycles = []

    # Enumerate each elementary cycle exactly once by anchoring the search
    # at the cycle's smallest node and never descending below the anchor.
    for anchor in sorted(edges):
        path = [anchor]
        on_path = {anchor}

        def dfs(node):
            for nxt in edges.get(node, ()):
                if nxt == anchor:
                    cycles.append(path + [anchor])
                elif nxt > anchor and nxt not in on_path:
                    path.append(nxt)
                    on_path.add(nxt)
                    dfs(nxt)
                    on_path.discard(nxt)
                    path.pop()

        dfs(anchor)
    return cycles
