"""NDCG, paired t-test and per-query comparison reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

CUTOFFS = (5, 10, 15, 20)

# (-inf,-0.25], (-0.25,-0.05], (-0.05,0.05), [0.05,0.25), [0.25,inf)
DELTA_BINS = ("<=-0.25", "(-0.25,-0.05]", "(-0.05,0.05)", "[0.05,0.25)", ">=0.25")


def _gain(rel: float, gain: str) -> float:
    if gain == "exponential":
        return 2.0 ** rel - 1.0
    if gain == "linear":
        return float(rel)
    raise ValueError(f"unknown gain {gain!r}")


def dcg(grades: Sequence[float], k: int, gain: str = "exponential") -> float:
    return sum(_gain(g, gain) / math.log2(i + 2) for i, g in enumerate(grades[:k]))


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int, gain: str = "exponential") -> float:
    """NDCG@k of a ranked id list; unjudged ids count as grade 0.

    Returns 0 for queries without any relevant table.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = dcg(sorted(qrels.values(), reverse=True), k, gain)
    if ideal <= 0:
        return 0.0
    return dcg([qrels.get(d, 0) for d in ranking], k, gain) / ideal


# ---------------------------------------------------------------------------
# Student t via the regularized incomplete beta function
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-16) -> float:
    """Continued fraction for I_x(a, b), modified Lentz."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-tailed p-value of a paired t-test on ``a - b``."""
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = [x - y for x, y in zip(a, b)]
    mean = sum(d) / n
    var = sum((x - mean) ** 2 for x in d) / (n - 1)
    if var <= 1e-30:
        return 1.0 if abs(mean) <= 1e-15 else 0.0
    t = mean / math.sqrt(var / n)
    return t_two_tailed_p(t, n - 1)


def significance_mark(p: float) -> str:
    if p < 0.005:
        return "‡"
    if p < 0.05:
        return "†"
    return ""


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def delta_bin(delta: float) -> int:
    if delta <= -0.25:
        return 0
    if delta <= -0.05:
        return 1
    if delta < 0.05:
        return 2
    if delta < 0.25:
        return 3
    return 4


@dataclass
class EvalReport:
    baseline: str
    cutoffs: tuple[int, ...]
    per_query: dict[str, dict[int, dict[str, float]]]  # method -> k -> qid -> ndcg
    means: dict[str, dict[int, float]] = field(default_factory=dict)
    p_values: dict[str, dict[int, float]] = field(default_factory=dict)
    deltas: dict[str, dict[str, float]] = field(default_factory=dict)  # method -> qid -> delta@20
    histograms: dict[str, list[int]] = field(default_factory=dict)
    subset_means: dict[str, dict[str, float]] = field(default_factory=dict)  # method -> subset -> ndcg@20

    def summary(self) -> dict:
        return {
            "baseline": self.baseline,
            "cutoffs": list(self.cutoffs),
            "means": {m: {f"ndcg@{k}": v for k, v in ks.items()} for m, ks in self.means.items()},
            "p_values": {m: {f"ndcg@{k}": v for k, v in ks.items()} for m, ks in self.p_values.items()},
            "histograms": {m: dict(zip(DELTA_BINS, h)) for m, h in self.histograms.items()},
            "subset_means": self.subset_means,
        }


def analyze_scores(
    per_query: Mapping[str, Mapping[int, Mapping[str, float]]],
    baseline: str,
    query_subsets: Mapping[str, str] | None = None,
    delta_k: int = 20,
) -> EvalReport:
    """Compare per-query metric values of several methods against ``baseline``."""
    if baseline not in per_query:
        raise ValueError(f"baseline {baseline!r} not among methods {sorted(per_query)}")
    cutoffs = tuple(sorted(next(iter(per_query.values())).keys()))
    base_queries = set(per_query[baseline][cutoffs[0]])
    for m, ks in per_query.items():
        for k, vals in ks.items():
            if set(vals) != base_queries:
                raise ValueError(f"method {m!r} covers different queries than {baseline!r} at k={k}")
    qids = sorted(base_queries)
    report = EvalReport(baseline, cutoffs, {m: {k: dict(v) for k, v in ks.items()} for m, ks in per_query.items()})
    for m, ks in per_query.items():
        report.means[m] = {k: sum(ks[k][q] for q in qids) / len(qids) if qids else 0.0 for k in cutoffs}
        if m != baseline and len(qids) >= 2:
            report.p_values[m] = {
                k: paired_t_test([ks[k][q] for q in qids], [per_query[baseline][k][q] for q in qids])
                for k in cutoffs
            }
        if m != baseline and delta_k in ks:
            deltas = {q: ks[delta_k][q] - per_query[baseline][delta_k][q] for q in qids}
            report.deltas[m] = deltas
            hist = [0] * len(DELTA_BINS)
            for d in deltas.values():
                hist[delta_bin(d)] += 1
            report.histograms[m] = hist
        if query_subsets and delta_k in ks:
            groups: dict[str, list[float]] = {}
            for q in qids:
                groups.setdefault(query_subsets.get(q, ""), []).append(ks[delta_k][q])
            report.subset_means[m] = {s: sum(v) / len(v) for s, v in sorted(groups.items())}
    return report


def per_query_ndcg(
    rankings: Mapping[str, Sequence[str]],
    qrels: Mapping[str, Mapping[str, int]],
    cutoffs: Sequence[int] = CUTOFFS,
    gain: str = "exponential",
    queries: Sequence[str] | None = None,
) -> dict[int, dict[str, float]]:
    qids = list(queries) if queries is not None else sorted(rankings)
    return {k: {q: ndcg_at_k(rankings.get(q, []), qrels.get(q, {}), k, gain) for q in qids} for k in cutoffs}


def analyze(
    runs: Mapping[str, Mapping[str, Sequence[str]]],
    qrels: Mapping[str, Mapping[str, int]],
    query_subsets: Mapping[str, str] | None = None,
    baseline: str | None = None,
    cutoffs: Sequence[int] = CUTOFFS,
    gain: str = "exponential",
) -> EvalReport:
    """Per-method NDCG, p-values, NDCG@20 deltas and subset means from rankings."""
    if not runs:
        raise ValueError("no runs given")
    baseline = baseline or next(iter(runs))
    ref = set(runs[baseline])
    for m, r in runs.items():
        if set(r) != ref:
            raise ValueError(f"run {m!r} does not cover the same queries as {baseline!r}")
    per_query = {m: per_query_ndcg(r, qrels, cutoffs, gain, sorted(ref)) for m, r in runs.items()}
    return analyze_scores(per_query, baseline, query_subsets, delta_k=max(cutoffs))


def write_report(report: EvalReport, out_dir: str | Path, prefix: str = "report") -> dict[str, Path]:
    """Writes ``<prefix>.tsv`` (blocks), ``<prefix>.json`` and ``<prefix>_hist.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = list(report.per_query)
    tsv = out_dir / f"{prefix}.tsv"
    with tsv.open("w", encoding="utf-8") as fh:
        fh.write("# means\nmethod\t" + "\t".join(f"ndcg@{k}" for k in report.cutoffs) + "\n")
        for m in methods:
            cells = []
            for k in report.cutoffs:
                mark = significance_mark(report.p_values[m][k]) if m in report.p_values else ""
                cells.append(f"{report.means[m][k]:.4f}{mark}")
            fh.write(m + "\t" + "\t".join(cells) + "\n")
        fh.write("\n# p_values_vs_" + report.baseline + "\nmethod\t" + "\t".join(f"ndcg@{k}" for k in report.cutoffs) + "\n")
        for m, ps in report.p_values.items():
            fh.write(m + "\t" + "\t".join(f"{ps[k]:.6g}" for k in report.cutoffs) + "\n")
        k_last = report.cutoffs[-1]
        fh.write(f"\n# per_query_ndcg@{k_last}\nqueryId\t" + "\t".join(methods) + "\n")
        for q in sorted(report.per_query[report.baseline][k_last]):
            fh.write(q + "\t" + "\t".join(f"{report.per_query[m][k_last][q]:.4f}" for m in methods) + "\n")
        if report.subset_means:
            subsets = sorted({s for v in report.subset_means.values() for s in v})
            fh.write("\n# subset_means\nmethod\t" + "\t".join(subsets) + "\n")
            for m, v in report.subset_means.items():
                fh.write(m + "\t" + "\t".join(f"{v.get(s, float('nan')):.4f}" for s in subsets) + "\n")
    js = out_dir / f"{prefix}.json"
    js.write_text(json.dumps(report.summary(), indent=2, sort_keys=True), encoding="utf-8")
    hist = out_dir / f"{prefix}_hist.csv"
    with hist.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "queryId", "delta"])
        for m, deltas in report.deltas.items():
            for q, d in sorted(deltas.items()):
                w.writerow([m, q, f"{d:.6f}"])
    return {"tsv": tsv, "json": js, "hist": hist}
