"""Choose between no-sharing and fully-sharing for a fleet.

Both modes are run on copies of the fleet.  With per-container no-sharing
sizes ``s``, fully-sharing sizes ``s'`` and fully-sharing fleet total ``t'``:

    alpha = sum(s) - t'          bytes duplicated across no-sharing containers
    beta  = sum(s' - s)          bytes fully-sharing drags along unnecessarily
    theta = alpha / beta           (alpha / epsilon when beta == 0)

Fully-sharing is recommended when ``theta >= threshold``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Sequence, Union

from .convert import ConvertMode, Variant, convert_fully_sharing, convert_no_sharing
from .errors import AnalysisFailed
from .layers import ContainerFs, account_sizes
from .pipeline import AccessTrace, export_fleet, profile

DEFAULT_THRESHOLD = 1.0
DEFAULT_EPSILON = 1  # bytes; only guards the beta == 0 division


@dataclass
class ModeReport:
    containers: list[str]
    no_sharing_sizes: list[int]
    fully_sharing_sizes: list[int]
    no_sharing_total: int
    fully_sharing_total: int
    alpha: int
    beta: int
    epsilon: float
    theta: float
    threshold: float
    recommendation: Variant

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["recommendation"] = self.recommendation.value
        return doc

    @classmethod
    def from_sizes(cls, s: Sequence[int], s_prime: Sequence[int], t: int, t_prime: int,
                   containers: Sequence[str] = (), threshold: float = DEFAULT_THRESHOLD,
                   epsilon: float = DEFAULT_EPSILON) -> "ModeReport":
        if len(s) != len(s_prime):
            raise ValueError("need one no-sharing and one fully-sharing size per container")
        alpha = sum(s) - t_prime
        beta = sum(b - a for a, b in zip(s, s_prime))
        if alpha < 0 or any(b < a for a, b in zip(s, s_prime)):
            # both are guaranteed non-negative by construction; anything else is an engine bug
            raise AnalysisFailed(f"inconsistent sizes: alpha={alpha}, s={list(s)}, s'={list(s_prime)}")
        theta = alpha / beta if beta else alpha / epsilon
        names = list(containers) or [f"c{i + 1}" for i in range(len(s))]
        return cls(names, list(s), list(s_prime), t, t_prime, alpha, beta, epsilon, theta,
                   threshold, select_mode(theta, threshold).variant)


def select_mode(report_or_theta: Union[ModeReport, float], threshold: float = DEFAULT_THRESHOLD) -> ConvertMode:
    theta = report_or_theta.theta if isinstance(report_or_theta, ModeReport) else float(report_or_theta)
    if theta < threshold:
        return ConvertMode(Variant.NO_SHARING)
    return ConvertMode(Variant.FULLY_SHARING)


def _debloated_sizes(fleet: list[ContainerFs], traces: list[AccessTrace], variant: Variant):
    fleet = copy.deepcopy(fleet)
    if variant is Variant.FULLY_SHARING:
        converted = convert_fully_sharing(fleet)
    else:
        converted = [convert_no_sharing(fs) for fs in fleet]
    for run in profile(converted, traces):
        bad = [f for f in run.failures if f.reason != "ContentMismatch"]
        if bad:
            f = bad[0]
            raise AnalysisFailed(f"{run.container_id}: event {f.index} ({f.path}) failed "
                                 f"under {variant.flag}: {f.reason}")
    account = account_sizes(export_fleet(converted))
    return [account.per_container[fs.container_id] for fs in converted], account.total


def analyze(fleet: Sequence[ContainerFs], traces: Sequence[AccessTrace],
            threshold: float = DEFAULT_THRESHOLD, epsilon: float = DEFAULT_EPSILON) -> ModeReport:
    """Debloat copies of ``fleet`` both ways and compare the sizes.

    The caller's containers are left untouched.
    """
    fleet, traces = list(fleet), list(traces)
    if len(fleet) != len(traces):
        raise AnalysisFailed(f"{len(fleet)} containers but {len(traces)} traces")
    ids = [fs.container_id for fs in fleet]
    if len(set(ids)) != len(ids):
        raise AnalysisFailed(f"container ids must be unique: {ids}")
    s, t = _debloated_sizes(fleet, traces, Variant.NO_SHARING)
    s_prime, t_prime = _debloated_sizes(fleet, traces, Variant.FULLY_SHARING)
    return ModeReport.from_sizes(s, s_prime, t, t_prime, ids, threshold, epsilon)
