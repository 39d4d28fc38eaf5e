"""Retrieval quality metrics: average precision and the top-4 group score.

average_precision follows the usual convention where every relevant item
missing from the ranked list contributes zero precision. The top-4 score
(N-S style) counts relevant images among the first four results of a
4-image group, query included; ranked lists shorter than four count what
exists.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadGroup, NoRelevant


def _ids(ranked) -> list[int]:
    return [item[0] if isinstance(item, tuple) else int(item) for item in ranked]


def average_precision(
    ranked,
    relevant: set[int],
    exclude_self: bool = True,
    query_id: int | None = None,
) -> float:
    """AP of a ranked list: (1/R) * sum over relevant hits of precision@hit.

    With exclude_self the query id is removed from both the relevant set
    and the ranking before computing, matching the usual protocol for
    self-indexed query sets.
    """
    ids = _ids(ranked)
    relevant = set(relevant)
    if exclude_self and query_id is not None:
        relevant.discard(query_id)
        ids = [i for i in ids if i != query_id]
    if not relevant:
        raise NoRelevant("no relevant images after self-exclusion")

    hits = 0
    total = 0.0
    for rank, img in enumerate(ids, start=1):
        if img in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def ns_score(ranked, group: set[int]) -> int:
    """Number of group members among the top-4 results (query counts)."""
    if len(group) != 4:
        raise BadGroup(f"group must have 4 images, got {len(group)}")
    return len(set(_ids(ranked)[:4]) & set(group))


@dataclass(frozen=True)
class EvalReport:
    """Per-query metric values plus their arithmetic mean."""

    metric: str
    per_query: list[tuple[int, float]]
    aggregate: float

    @property
    def n_queries(self) -> int:
        return len(self.per_query)

    def to_csv(self) -> str:
        lines = ["query_id,value"]
        lines += [f"{qid},{value:.12g}" for qid, value in self.per_query]
        lines.append(f"mean,{self.aggregate:.12g}")
        return "\n".join(lines) + "\n"


def make_report(metric: str, per_query: list[tuple[int, float]]) -> EvalReport:
    if not per_query:
        raise NoRelevant("no queries evaluated")
    mean = sum(v for _, v in per_query) / len(per_query)
    return EvalReport(metric=metric, per_query=per_query, aggregate=mean)
