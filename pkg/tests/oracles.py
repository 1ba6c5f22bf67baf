"""Slow reference implementations the fast code is checked against."""

import itertools


def brute_force(n, edges, waits, t_wait, kinds=None):
    """Cases by exhaustive reachability; no graph library involved."""
    E = [v for v in range(n) if waits[v] >= t_wait]
    adj = {v: set() for v in E}
    kind = {}
    for u, v, k in edges:
        if u in adj and v in adj:
            adj[u].add(v)
            kind[u, v] = k
    reach = {v: set(adj[v]) for v in E}
    changed = True
    while changed:
        changed = False
        for v in E:
            extra = set().union(*(reach[w] for w in reach[v])) - reach[v] if reach[v] else set()
            if extra:
                reach[v] |= extra
                changed = True
    on_cycle = [v for v in E if v in reach[v]]
    comps = []
    for v in on_cycle:
        comp = frozenset([v] + [w for w in on_cycle if w in reach[v] and v in reach[w]])
        if comp not in comps:
            comps.append(comp)
    contenders = set().union(*comps) if comps else set()

    # shortest chain of allowed edges from every other waiter to any contender
    def ok(u, v):
        return kinds is None or kind[u, v] in kinds

    dist = {}
    for src in E:
        if src in contenders:
            continue
        best = None
        for length in range(1, len(E)):
            for mids in itertools.permutations([x for x in E if x != src], length - 1):
                walk = (src,) + mids
                if any(x in contenders for x in mids):
                    continue
                for target in contenders:
                    hops = walk + (target,)
                    if all(hops[i + 1] in adj[hops[i]] and ok(hops[i], hops[i + 1]) for i in range(len(hops) - 1)):
                        best = length
                        break
                if best:
                    break
            if best:
                break
        if best:
            dist[src] = best
    return sorted(sorted(c) for c in comps), dist, adj


def chain_distance(adj, kind, u, target, kinds):
    """Shortest allowed-edge distance from u to target."""
    seen, frontier, d = {u}, [u], 0
    while frontier:
        d += 1
        nxt = []
        for x in frontier:
            for y in sorted(adj[x]):
                if kinds is not None and kind[x, y] not in kinds:
                    continue
                if y == target:
                    return d
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        frontier = nxt
    return None
