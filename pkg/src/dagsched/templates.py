"""Hand-authored job shapes standing in for the 22 TPC-H queries.

Each stage is ``(relative task count, relative task duration)``. Roots are input
scans, the single sink is the final output stage. ``work_factor`` spreads total
work across templates; together with the input-size mix it yields a heavy-tailed
job-size distribution. ``sweet_spot`` (times sqrt(size)) is the parallelism
beyond which tasks start to slow down.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Template:
    name: str
    stages: tuple[tuple[float, float], ...]
    edges: tuple[tuple[int, int], ...]
    work_factor: float
    first_wave_factor: float = 1.4
    sweet_spot: float = 1.5
    inflation_slope: float = 0.35


def _t(name, stages, edges, work_factor, first_wave_factor=1.4, sweet_spot=1.5, slope=0.35):
    return Template(name, tuple(stages), tuple(edges), work_factor, first_wave_factor, sweet_spot, slope)


TEMPLATES: tuple[Template, ...] = (
    # scan -> aggregate -> sort
    _t("q1", [(3, 1.0), (1, 0.6), (0.3, 0.3)], [(0, 1), (1, 2)], 1.6, 1.5, 2.0),
    # five scans feeding a join tree
    _t("q2", [(1, 0.5), (0.5, 0.4), (1, 0.5), (0.5, 0.4), (1.5, 0.7), (1, 0.6), (1, 0.6),
              (1, 0.6), (0.5, 0.4), (0.3, 0.3)],
       [(0, 5), (1, 5), (2, 6), (3, 6), (4, 7), (5, 7), (6, 8), (7, 8), (8, 9)], 0.45, 1.3, 1.0),
    # three scans, two joins, aggregate
    _t("q3", [(2, 0.8), (1, 0.5), (2.5, 0.9), (1.5, 0.7), (1.5, 0.7), (0.5, 0.4), (0.3, 0.3)],
       [(0, 3), (1, 3), (2, 4), (3, 4), (4, 5), (5, 6)], 1.0),
    # semi-join of two scans
    _t("q4", [(2, 0.7), (2, 0.8), (1, 0.6), (0.5, 0.4), (0.3, 0.2)],
       [(0, 2), (1, 2), (2, 3), (3, 4)], 0.55, 1.4, 1.2),
    # six-way join: deep chain of joins
    _t("q5", [(1, 0.4), (0.5, 0.3), (1, 0.5), (2, 0.8), (3, 1.0), (0.5, 0.3), (1, 0.6), (1, 0.6),
              (1.5, 0.7), (1.5, 0.7), (1.5, 0.8), (1, 0.5), (0.5, 0.4), (0.3, 0.3)],
       [(0, 6), (1, 6), (6, 7), (2, 7), (7, 8), (3, 8), (8, 9), (4, 9), (9, 10), (5, 10), (10, 11),
        (11, 12), (12, 13)], 1.2, 1.5, 1.5),
    # single scan with filter, tiny aggregate
    _t("q6", [(3, 0.8), (0.3, 0.2), (0.1, 0.2)], [(0, 1), (1, 2)], 0.3, 1.6, 2.5),
    # two branches converging in a join (small left branch, heavy right branch)
    _t("q7", [(1, 0.3), (3, 1.0), (3, 1.0), (1, 0.5), (0.3, 0.3)],
       [(0, 3), (1, 2), (2, 3), (3, 4)], 1.4, 1.4, 1.5),
    # wide join of seven inputs
    _t("q8", [(0.5, 0.3), (0.5, 0.3), (1, 0.5), (2, 0.8), (2.5, 0.9), (0.5, 0.3), (0.5, 0.3),
              (1, 0.6), (1, 0.6), (1, 0.6), (1.5, 0.7), (1, 0.5), (0.5, 0.4), (0.3, 0.2)],
       [(0, 7), (1, 7), (2, 8), (3, 8), (4, 9), (5, 9), (6, 10), (7, 10), (8, 11), (9, 11),
        (10, 11), (11, 12), (12, 13)], 0.9, 1.3, 1.2),
    # heavy join over the largest tables
    _t("q9", [(1, 0.5), (2, 0.8), (3, 1.2), (3, 1.2), (1, 0.4), (0.5, 0.3), (2, 0.9), (2, 0.9),
              (2, 0.9), (1.5, 0.8), (1, 0.5), (0.5, 0.4), (0.3, 0.3)],
       [(0, 6), (1, 6), (2, 7), (3, 7), (4, 8), (5, 8), (6, 9), (7, 9), (8, 10), (9, 10),
        (10, 11), (11, 12)], 2.0, 1.4, 2.2),
    # four scans, star join, top-k
    _t("q10", [(2, 0.8), (1, 0.5), (2.5, 0.9), (0.3, 0.2), (1.5, 0.7), (1.5, 0.7), (1, 0.6),
               (0.5, 0.4), (0.2, 0.2)],
       [(0, 4), (1, 4), (2, 5), (4, 5), (3, 6), (5, 6), (6, 7), (7, 8)], 1.1),
    # nested aggregate with a side branch joining back in
    _t("q11", [(0.5, 0.3), (0.3, 0.3), (1, 0.5), (0.5, 0.4), (0.5, 0.3), (0.5, 0.4), (0.2, 0.2)],
       [(0, 2), (1, 2), (2, 3), (2, 4), (4, 5), (3, 5), (5, 6)], 0.25, 1.3, 0.8),
    # two scans, join, group-by
    _t("q12", [(2.5, 0.9), (1.5, 0.6), (1.5, 0.7), (0.3, 0.2)],
       [(0, 2), (1, 2), (2, 3)], 0.8, 1.5, 1.8),
    # outer join then double aggregation
    _t("q13", [(1, 0.6), (2.5, 1.0), (1.5, 0.8), (1, 0.5), (0.5, 0.3), (0.2, 0.2)],
       [(0, 2), (1, 2), (2, 3), (3, 4), (4, 5)], 1.3, 1.5, 1.6),
    # promotion-effect join, small output
    _t("q14", [(2, 0.7), (0.5, 0.3), (1, 0.5), (0.1, 0.2)],
       [(0, 2), (1, 2), (2, 3)], 0.35, 1.6, 1.5),
    # view plus max subquery: diamond
    _t("q15", [(2, 0.7), (1, 0.6), (0.5, 0.3), (0.3, 0.3), (0.5, 0.4), (0.2, 0.2)],
       [(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5)], 0.5, 1.4, 1.2),
    # anti-join with three inputs
    _t("q16", [(0.5, 0.3), (1, 0.5), (0.3, 0.2), (1, 0.5), (0.5, 0.4), (0.5, 0.3), (0.2, 0.2)],
       [(0, 3), (1, 3), (2, 4), (3, 4), (4, 5), (5, 6)], 0.3, 1.3, 1.0),
    # correlated subquery: two scans of the same table
    _t("q17", [(3, 1.0), (0.5, 0.3), (1, 0.6), (2, 0.8), (1, 0.6), (0.2, 0.2)],
       [(0, 2), (1, 2), (0, 3), (2, 4), (3, 4), (4, 5)], 1.5, 1.4, 2.0),
    # large-volume customers: wide and deep
    _t("q18", [(3, 1.0), (1, 0.5), (3, 1.0), (2, 0.8), (1.5, 0.7), (1.5, 0.7), (1, 0.6),
               (0.5, 0.4), (0.2, 0.2)],
       [(0, 3), (2, 3), (0, 4), (1, 4), (3, 5), (4, 5), (5, 6), (6, 7), (7, 8)], 1.8, 1.5, 2.0),
    # discounted revenue: join with a big filter predicate
    _t("q19", [(3, 0.9), (0.5, 0.3), (1, 0.6), (0.1, 0.2)],
       [(0, 2), (1, 2), (2, 3)], 0.4, 1.6, 1.5),
    # potential promotion: nested semi-joins
    _t("q20", [(0.5, 0.3), (0.3, 0.2), (3, 1.0), (0.5, 0.3), (1, 0.5), (1.5, 0.7), (1, 0.5),
               (0.5, 0.4), (0.2, 0.2)],
       [(0, 4), (1, 4), (2, 5), (4, 5), (3, 6), (5, 6), (6, 7), (7, 8)], 0.7, 1.3, 1.2),
    # suppliers who kept orders waiting: many self-joins
    _t("q21", [(1, 0.4), (3, 1.1), (3, 1.1), (3, 1.1), (0.5, 0.3), (2, 0.9), (2, 0.9), (1.5, 0.8),
               (1, 0.6), (1, 0.5), (0.5, 0.3), (0.5, 0.4), (0.2, 0.2)],
       [(0, 5), (1, 5), (2, 6), (5, 6), (3, 7), (6, 7), (4, 8), (7, 8), (8, 9), (9, 10),
        (10, 11), (11, 12)], 1.9, 1.4, 2.0),
    # global sales opportunity: anti-join against aggregate
    _t("q22", [(1, 0.5), (0.5, 0.3), (1, 0.5), (0.5, 0.3), (0.2, 0.2)],
       [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)], 0.2, 1.3, 0.8),
)
