"""Agreement statistics: ICC(2,1) with 95% confidence intervals, clinical
banding, and report aggregation.

The point estimate is the single-rater, absolute-agreement intraclass
correlation from a two-way ANOVA decomposition (McGraw & Wong 1996 call
it ICC(A,1)); it is identical under the random- and mixed-effects
two-way models, so one formula serves both. Confidence bounds use the
standard construction with a Satterthwaite denominator df and F
quantiles at (1+confidence)/2. Clinical bands follow Cicchetti (1994):
poor < 0.40 <= fair < 0.60 <= good < 0.75 <= excellent.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .special import f_ppf
from .validation import ValidationError, check_paired_samples

__all__ = [
    "AnovaComponents",
    "IccResult",
    "MeasurementIcc",
    "KindStats",
    "Aggregates",
    "anova_two_way",
    "icc_2_1",
    "band",
    "aggregate",
    "improvement_pct",
    "write_report_csv",
    "read_report_csv",
    "summarize",
]

BANDS = ("poor", "fair", "good", "excellent")


@dataclass(frozen=True)
class AnovaComponents:
    """Mean squares of the two-way decomposition (rows = subjects/scans,
    columns = raters)."""

    msr: float
    msc: float
    mse: float
    n: int
    k: int
    ss_rows: float
    ss_cols: float
    ss_err: float
    ss_total: float


@dataclass(frozen=True)
class IccResult:
    icc: float
    ci_low: float
    ci_high: float
    band: str
    components: AnovaComponents
    degenerate: bool = False


@dataclass(frozen=True)
class MeasurementIcc:
    name: str
    kind: str
    result: IccResult

    @property
    def n(self) -> int:
        return self.result.components.n


def anova_two_way(samples) -> AnovaComponents:
    data = check_paired_samples(samples)
    n, k = data.shape
    grand = data.mean()
    row_means = data.mean(axis=1)
    col_means = data.mean(axis=0)
    ss_rows = k * float(((row_means - grand) ** 2).sum())
    ss_cols = n * float(((col_means - grand) ** 2).sum())
    ss_total = float(((data - grand) ** 2).sum())
    ss_err = ss_total - ss_rows - ss_cols
    return AnovaComponents(
        msr=ss_rows / (n - 1),
        msc=ss_cols / (k - 1),
        mse=ss_err / ((n - 1) * (k - 1)),
        n=n,
        k=k,
        ss_rows=ss_rows,
        ss_cols=ss_cols,
        ss_err=ss_err,
        ss_total=ss_total,
    )


def band(icc: float) -> str:
    """Cicchetti clinical band of an ICC point estimate."""
    if not math.isfinite(icc):
        raise ValidationError(f"band requires a finite ICC, got {icc}")
    if icc < 0.40:
        return "poor"
    if icc < 0.60:
        return "fair"
    if icc < 0.75:
        return "good"
    return "excellent"


def icc_2_1(samples, confidence: float = 0.95) -> IccResult:
    """Two-way, absolute-agreement, single-rater ICC with its CI.

    Degenerate inputs (zero between-row variance) come back flagged with
    a collapsed CI instead of raising, so batch evaluation over many
    measurements never aborts on one pathological column.
    """
    if not 0.0 < confidence < 1.0:
        raise ValidationError(f"confidence must be in (0, 1), got {confidence}")
    comp = anova_two_way(samples)
    n, k = comp.n, comp.k
    msr, msc, mse = comp.msr, comp.msc, comp.mse

    if comp.ss_total <= 0.0:
        # every value identical: no variance for raters to agree on
        return IccResult(0.0, 0.0, 0.0, band(0.0), comp, degenerate=True)

    denom = msr + (k - 1) * mse + (k / n) * (msc - mse)
    if denom == 0.0:
        return IccResult(0.0, 0.0, 0.0, band(0.0), comp, degenerate=True)
    icc = (msr - mse) / denom
    degenerate = comp.ss_rows <= 1e-14 * comp.ss_total

    if icc >= 1.0 - 1e-12:
        icc = min(icc, 1.0)
        return IccResult(icc, icc, icc, band(icc), comp, degenerate=degenerate)

    # Satterthwaite df for the denominator mean square
    a = (k * icc) / (n * (1.0 - icc))
    b = 1.0 + (k * icc * (n - 1)) / (n * (1.0 - icc))
    num = (a * msc + b * mse) ** 2
    den = (a * msc) ** 2 / (k - 1) + (b * mse) ** 2 / ((n - 1) * (k - 1))
    if den <= 0.0 or not math.isfinite(num / den) or num / den <= 0.0:
        return IccResult(icc, -1.0, 1.0, band(icc), comp, degenerate=True)
    nu = num / den

    p = 0.5 * (1.0 + confidence)
    f_lower = f_ppf(p, n - 1.0, nu)
    f_upper = f_ppf(p, nu, n - 1.0)
    lower = n * (msr - f_lower * mse) / (
        f_lower * (k * msc + (k * n - k - n) * mse) + n * msr
    )
    upper = n * (f_upper * msr - mse) / (
        k * msc + (k * n - k - n) * mse + n * f_upper * msr
    )
    lower = min(max(lower, -1.0), 1.0)
    upper = min(max(upper, -1.0), 1.0)
    return IccResult(icc, lower, upper, band(icc), comp, degenerate=degenerate)


def improvement_pct(ours: float, baseline: float) -> float:
    """Percent improvement of ``ours`` over ``baseline``, to two decimals."""
    if baseline <= 0.0:
        raise ValidationError(f"baseline must be positive, got {baseline}")
    return round(100.0 * (ours - baseline) / baseline, 2)


@dataclass(frozen=True)
class KindStats:
    count: int
    mean: float
    sd: float
    min: float
    max: float
    mean_ci_width: float
    bands: Mapping[str, int]


@dataclass(frozen=True)
class Aggregates:
    overall: KindStats
    per_kind: Mapping[str, KindStats]


def _stats(entries: Sequence[MeasurementIcc]) -> KindStats:
    iccs = np.array([e.result.icc for e in entries], dtype=np.float64)
    widths = np.array(
        [e.result.ci_high - e.result.ci_low for e in entries], dtype=np.float64
    )
    counts = {name: 0 for name in BANDS}
    for e in entries:
        counts[e.result.band] += 1
    return KindStats(
        count=len(entries),
        mean=float(iccs.mean()),
        sd=float(iccs.std()),  # population sd
        min=float(iccs.min()),
        max=float(iccs.max()),
        mean_ci_width=float(widths.mean()),
        bands=counts,
    )


def aggregate(entries: Iterable[MeasurementIcc]) -> Aggregates:
    """Unweighted mean / population sd of point ICCs, overall and per kind,
    plus clinical band counts."""
    entries = list(entries)
    if not entries:
        raise ValidationError("aggregate requires at least one report entry")
    kinds: dict[str, list[MeasurementIcc]] = {}
    for e in entries:
        kinds.setdefault(e.kind, []).append(e)
    return Aggregates(
        overall=_stats(entries),
        per_kind={kind: _stats(group) for kind, group in sorted(kinds.items())},
    )


# ---------------------------------------------------------------------------
# Report files

_REPORT_COLUMNS = ("measurement", "kind", "icc", "ci_low", "ci_high", "band", "n")


def write_report_csv(path, entries: Sequence[MeasurementIcc]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        for e in entries:
            r = e.result
            writer.writerow(
                [e.name, e.kind, repr(r.icc), repr(r.ci_low), repr(r.ci_high), r.band, r.components.n]
            )


def read_report_csv(path) -> list[MeasurementIcc]:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != _REPORT_COLUMNS:
            raise ValidationError(
                f"{path}: expected report columns {_REPORT_COLUMNS}, got {reader.fieldnames}"
            )
        for row in reader:
            icc = float(row["icc"])
            n = int(row["n"])
            comp = AnovaComponents(
                msr=math.nan, msc=math.nan, mse=math.nan, n=n, k=2,
                ss_rows=math.nan, ss_cols=math.nan, ss_err=math.nan, ss_total=math.nan,
            )
            result = IccResult(
                icc=icc,
                ci_low=float(row["ci_low"]),
                ci_high=float(row["ci_high"]),
                band=row["band"],
                components=comp,
            )
            entries.append(MeasurementIcc(row["measurement"], row["kind"], result))
    return entries


def summarize(
    entries: Sequence[MeasurementIcc],
    baseline: Optional[Sequence[MeasurementIcc]] = None,
) -> str:
    """Human-readable summary: mean +- sd per kind, band histograms, and an
    optional improvement comparison against a baseline report."""
    agg = aggregate(entries)
    out = io.StringIO()

    def line(label: str, stats: KindStats):
        bands = " ".join(f"{name}={stats.bands[name]}" for name in BANDS)
        out.write(
            f"{label:<12} n={stats.count:<3} mean_icc={stats.mean:+.4f} sd={stats.sd:.4f} "
            f"min={stats.min:+.4f} max={stats.max:+.4f} "
            f"mean_ci_width={stats.mean_ci_width:.4f} [{bands}]\n"
        )

    line("overall", agg.overall)
    for kind, stats in agg.per_kind.items():
        line(kind, stats)

    if baseline is not None:
        base_agg = aggregate(baseline)
        out.write("vs baseline:\n")
        pairs = [("overall", agg.overall, base_agg.overall)] + [
            (kind, stats, base_agg.per_kind[kind])
            for kind, stats in agg.per_kind.items()
            if kind in base_agg.per_kind
        ]
        for label, ours, theirs in pairs:
            if theirs.mean > 0:
                delta = improvement_pct(ours.mean, theirs.mean)
                out.write(
                    f"{label:<12} mean_icc {theirs.mean:+.4f} -> {ours.mean:+.4f} "
                    f"improvement {delta:+.2f}%\n"
                )
            else:
                out.write(
                    f"{label:<12} mean_icc {theirs.mean:+.4f} -> {ours.mean:+.4f} "
                    f"improvement n/a (baseline <= 0)\n"
                )
    return out.getvalue()
