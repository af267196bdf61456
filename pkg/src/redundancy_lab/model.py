"""System parameterization for parallel servers with redundancy scheduling.

Servers are numbered 1..N in every public interface. Internally a job type is
a bitmask over servers (bit ``n - 1`` is server ``n``) and a state is a tuple
of 0-based type indices, oldest job first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

PROB_TOLERANCE = 1e-12
MAX_SERVERS = 64
_RATE_TABLE_LIMIT = 20


class ModelError(ValueError):
    """Raised when a model violates its invariants."""


def mask_from_servers(servers: Iterable[int], server_count: int) -> int:
    mask = 0
    for s in servers:
        s = int(s)
        if not 1 <= s <= server_count:
            raise ModelError(f"server {s} outside 1..{server_count}")
        mask |= 1 << (s - 1)
    return mask


def servers_from_mask(mask: int) -> tuple[int, ...]:
    out = []
    n = 1
    while mask:
        if mask & 1:
            out.append(n)
        mask >>= 1
        n += 1
    return tuple(out)


def format_subset(mask: int) -> str:
    return "{" + ",".join(str(s) for s in servers_from_mask(mask)) + "}"


@dataclass(frozen=True)
class CompatibilityModel:
    """Servers with speeds, job types with selection probabilities, and a load.

    ``lam`` is the arrival rate normalized per server: jobs arrive at total
    rate ``N * lam`` and a type-S job arrives at rate ``N * lam * p_S``.
    """

    speeds: tuple[float, ...]
    masks: tuple[int, ...]
    probs: tuple[float, ...]
    lam: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        n = len(self.speeds)
        if n < 1:
            raise ModelError("at least one server is required")
        if n > MAX_SERVERS:
            raise ModelError(f"at most {MAX_SERVERS} servers are supported")
        if any(not math.isfinite(s) or s < 0 for s in self.speeds):
            raise ModelError("speeds must be finite and non-negative")
        if sum(self.speeds) <= 0:
            raise ModelError("average speed must be strictly positive")
        if len(self.masks) != len(self.probs) or not self.masks:
            raise ModelError("need at least one job type, with one probability each")
        full = (1 << n) - 1
        for m in self.masks:
            if m == 0:
                raise ModelError("job type with empty server subset")
            if m & ~full:
                raise ModelError(f"job type {format_subset(m)} references servers beyond {n}")
        if len(set(self.masks)) != len(self.masks):
            raise ModelError("duplicate server subsets among job types")
        if any(not (p > 0) for p in self.probs):
            raise ModelError("every type probability must be > 0")
        if abs(math.fsum(self.probs) - 1.0) > PROB_TOLERANCE:
            raise ModelError(f"type probabilities sum to {math.fsum(self.probs)!r}, not 1")
        if not (self.lam > 0) or not math.isfinite(self.lam):
            raise ModelError("normalized arrival rate lambda must be positive")

    # -- basic quantities -------------------------------------------------

    @property
    def server_count(self) -> int:
        return len(self.speeds)

    @property
    def type_count(self) -> int:
        return len(self.masks)

    @property
    def full_mask(self) -> int:
        return (1 << self.server_count) - 1

    @property
    def mean_speed(self) -> float:
        """Average speed over all servers."""
        return math.fsum(self.speeds) / self.server_count

    @property
    def total_speed(self) -> float:
        return math.fsum(self.speeds)

    @property
    def total_arrival_rate(self) -> float:
        return self.server_count * self.lam

    @property
    def load(self) -> float:
        """lambda / mu."""
        return self.lam / self.mean_speed

    @property
    def arrival_rates(self) -> tuple[float, ...]:
        return tuple(self.server_count * self.lam * p for p in self.probs)

    @property
    def replication_degree(self) -> float:
        return math.fsum(p * bin(m).count("1") for m, p in zip(self.masks, self.probs))

    @property
    def server_shares(self) -> tuple[float, ...]:
        """q_n: total probability of the types that include server n."""
        return tuple(
            math.fsum(p for m, p in zip(self.masks, self.probs) if m >> n & 1)
            for n in range(self.server_count)
        )

    @property
    def is_graph_model(self) -> bool:
        return all(bin(m).count("1") == 2 for m in self.masks)

    @property
    def has_identical_speeds(self) -> bool:
        return len(set(self.speeds)) == 1

    def type_servers(self, index: int) -> tuple[int, ...]:
        return servers_from_mask(self.masks[index])

    def type_label(self, index: int) -> str:
        return format_subset(self.masks[index])

    @property
    def type_labels(self) -> list[str]:
        return [format_subset(m) for m in self.masks]

    def type_index(self, servers: Iterable[int]) -> int:
        mask = mask_from_servers(servers, self.server_count)
        try:
            return self.masks.index(mask)
        except ValueError:
            raise ModelError(f"no job type with servers {format_subset(mask)}") from None

    @cached_property
    def _rate_table(self) -> list[float] | None:
        n = self.server_count
        if n > _RATE_TABLE_LIMIT:
            return None
        table = [0.0] * (1 << n)
        for mask in range(1, 1 << n):
            low = mask & -mask
            table[mask] = table[mask ^ low] + self.speeds[low.bit_length() - 1]
        return table

    def mask_rate(self, mask: int) -> float:
        """Aggregate speed of the servers in ``mask``."""
        table = self._rate_table
        if table is not None:
            return table[mask]
        return math.fsum(self.speeds[n - 1] for n in servers_from_mask(mask))

    # -- derived models ---------------------------------------------------

    def with_lambda(self, lam: float) -> "CompatibilityModel":
        return CompatibilityModel(self.speeds, self.masks, self.probs, float(lam), self.name)

    def with_load(self, load: float) -> "CompatibilityModel":
        """Same model with lambda set to ``load * mu``."""
        return self.with_lambda(load * self.mean_speed)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "servers": [{"id": i + 1, "speed": s} for i, s in enumerate(self.speeds)],
            "types": [
                {"servers": list(servers_from_mask(m)), "prob": p}
                for m, p in zip(self.masks, self.probs)
            ],
            "lambda": self.lam,
        }


def build_model(
    speeds: Sequence[float],
    types_with_probs: Sequence[tuple[Iterable[int], float]],
    lam: float,
    name: str = "",
) -> CompatibilityModel:
    """Validate and build a model from 1-based server subsets.

    Probabilities within ``PROB_TOLERANCE`` of summing to one are renormalized;
    anything further off is rejected.
    """
    speeds = tuple(float(s) for s in speeds)
    n = len(speeds)
    masks = []
    probs = []
    for servers, p in types_with_probs:
        servers = list(servers)
        if not servers:
            raise ModelError("job type with empty server subset")
        masks.append(mask_from_servers(servers, n))
        probs.append(float(p))
    total = math.fsum(probs)
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise ModelError(f"type probabilities sum to {total!r}, not 1")
    if total != 1.0:
        probs = [p / total for p in probs]
    return CompatibilityModel(speeds, tuple(masks), tuple(probs), float(lam), name)


def _speeds(n: int, speeds: Sequence[float] | None) -> list[float]:
    if speeds is None:
        return [1.0] * n
    if len(speeds) != n:
        raise ModelError(f"expected {n} speeds, got {len(speeds)}")
    return list(speeds)


def build_uniform_complete(n: int, speeds: Sequence[float] | None = None, lam: float = 0.5,
                           name: str = "") -> CompatibilityModel:
    """All server pairs, each with probability 1 / C(n, 2) (power-of-two replication)."""
    if n < 2:
        raise ModelError("uniform complete graph needs at least two servers")
    pairs = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    p = 1.0 / len(pairs)
    return build_model(_speeds(n, speeds), [(e, p) for e in pairs], lam,
                       name or f"uniform-complete-{n}")


def build_ring(n: int, epsilon: float = 0.5, speeds: Sequence[float] | None = None,
               lam: float = 0.5, name: str = "") -> CompatibilityModel:
    """Ring replication graph with alternating edge probabilities.

    Edge ``k = 0..n-1`` joins servers ``k + 1`` and ``k + 2`` (mod n, 1-based);
    even ``k`` gets ``2 * epsilon / n`` and odd ``k`` gets ``2 * (1 - epsilon) / n``.
    ``epsilon = 1/2`` is the homogeneous ring.
    """
    if n < 4 or n % 2:
        raise ModelError("ring needs an even number of servers, at least 4")
    if not 0.0 < epsilon < 1.0:
        raise ModelError("epsilon must lie in (0, 1)")
    types = []
    for k in range(n):
        p = (epsilon if k % 2 == 0 else 1.0 - epsilon) * 2.0 / n
        types.append(((k % n + 1, (k + 1) % n + 1), p))
    return build_model(_speeds(n, speeds), types, lam, name or f"ring-{n}-e{epsilon:g}")


def build_tree_model(n: int, epsilon: float, edges: Sequence[tuple[int, int]] | None = None,
                     speeds: Sequence[float] | None = None, lam: float = 0.5,
                     name: str = "") -> CompatibilityModel:
    """Singletons with mass (1 - eps)/n plus tree edges with mass eps/(n - 1).

    The default tree is the path 1-2-...-n. ``epsilon = 0`` drops the edges and
    leaves n independent single-server queues.
    """
    if n < 2:
        raise ModelError("tree model needs at least two servers")
    if not 0.0 <= epsilon < 1.0:
        raise ModelError("epsilon must lie in [0, 1)")
    if edges is None:
        edges = [(i, i + 1) for i in range(1, n)]
    if len(edges) != n - 1:
        raise ModelError("a spanning tree on n servers has n - 1 edges")
    types = [((i,), (1.0 - epsilon) / n) for i in range(1, n + 1)]
    if epsilon > 0:
        types += [(tuple(e), epsilon / (n - 1)) for e in edges]
    return build_model(_speeds(n, speeds), types, lam, name or f"tree-{n}-e{epsilon:g}")


def build_singleton_fullset(n: int, epsilon: float, speeds: Sequence[float] | None = None,
                            lam: float = 0.5, name: str = "") -> CompatibilityModel:
    """Singletons with mass (n - 1 - eps)/(n(n - 1)) plus the full set with eps/(n - 1)."""
    if n < 2:
        raise ModelError("singleton/full-set model needs at least two servers")
    if not 0.0 <= epsilon < n - 1:
        raise ModelError("epsilon must lie in [0, n - 1)")
    types = [((i,), (n - 1 - epsilon) / (n * (n - 1))) for i in range(1, n + 1)]
    if epsilon > 0:
        types.append((tuple(range(1, n + 1)), epsilon / (n - 1)))
    return build_model(_speeds(n, speeds), types, lam,
                       name or f"singleton-fullset-{n}-e{epsilon:g}")


def active_service_rate(model: CompatibilityModel, prefix_types: Sequence[int]) -> float:
    """Aggregate speed of the servers compatible with any type in the prefix."""
    if len(prefix_types) == 0:
        raise ModelError("active service rate of an empty prefix is undefined")
    mask = 0
    for t in prefix_types:
        mask |= model.masks[t]
    return model.mask_rate(mask)


def replica_counts(model: CompatibilityModel, per_type_counts: Sequence[int]) -> tuple[int, ...]:
    """R_n = sum of Q_S over the types S that contain server n."""
    if len(per_type_counts) != model.type_count:
        raise ModelError("need one count per job type")
    if any(c < 0 for c in per_type_counts):
        raise ModelError("counts must be non-negative")
    return tuple(
        sum(c for m, c in zip(model.masks, per_type_counts) if m >> n & 1)
        for n in range(model.server_count)
    )


def state_type_counts(model: CompatibilityModel, state: Sequence[int]) -> list[int]:
    counts = [0] * model.type_count
    for t in state:
        counts[t] += 1
    return counts


def validate_state(model: CompatibilityModel, state: Sequence[int]) -> tuple[int, ...]:
    state = tuple(int(t) for t in state)
    for t in state:
        if not 0 <= t < model.type_count:
            raise ModelError(f"state references unknown type index {t}")
    return state


def random_model(rng, max_servers: int = 6, max_types: int = 6, load: float | None = None,
                 ensure_stable: bool = True) -> CompatibilityModel:
    """Draw a random model, mostly for property tests.

    With ``ensure_stable`` the load is set strictly inside the stability
    region (a fraction of the largest stable load).
    """
    # local import: stability depends on this module
    from .stability import max_stable_load

    n = int(rng.integers(1, max_servers + 1))
    full = (1 << n) - 1
    k = int(rng.integers(1, min(max_types, full) + 1))
    masks = [int(m) + 1 for m in rng.choice(full, size=k, replace=False)]
    raw = rng.uniform(0.05, 1.0, size=k)
    probs = raw / raw.sum()
    speeds = rng.uniform(0.2, 2.0, size=n)
    base = CompatibilityModel(tuple(float(s) for s in speeds), tuple(masks),
                              tuple(float(p) for p in probs), 1.0, "random")
    if load is None:
        load = float(rng.uniform(0.1, 0.95))
    if ensure_stable:
        return base.with_load(load * max_stable_load(base))
    return base.with_load(load)
