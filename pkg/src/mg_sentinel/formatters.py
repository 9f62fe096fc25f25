"""Output formatters for run results."""

import csv
import sys
from abc import ABC, abstractmethod
from collections.abc import Iterable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from .dg_model import STATE_NAMES
from .observer import ObserverBank
from .opf import OpfReport
from .scenarios import SummaryRow
from .search import RankedAttack
from .simulation import SimTrace

TRACE_HEADER = ("t", "dg", *STATE_NAMES, "r_norm", "eta", "detected", "mitigated")
SUMMARY_HEADER = (
    "dg", "peak_v_dev", "peak_w_dev", "detections", "detection_latency", "eig_margin"
)
EIGEN_HEADER = ("re", "im", "scenario")
GAIN_HEADER = ("gain", "row", "col", "value")
SEARCH_HEADER = ("rank", "objective", "evaded", "rate_b", "scale", "shift")


def fmt(value: float | None) -> str:
    """Float with 12 significant digits; empty for None."""
    if value is None:
        return ""
    return f"{float(value):.12g}"


@dataclass
class GainEntry:
    """One nonzero entry of an exported observer gain."""

    gain: str
    row: int
    col: int
    value: float


def gain_entries(bank: ObserverBank) -> list[GainEntry]:
    """Nonzero entries of every DG's L′ and D, 1-based indices."""
    rows = []
    for i, gain in enumerate(bank.gains, start=1):
        prefix = "l_prime" if gain.variant == "nonlinear" else "l_output_injection"
        for name, mat in ((f"dg{i}.{prefix}", gain.l_prime), (f"dg{i}.d", gain.d)):
            for r, c in zip(*np.nonzero(mat), strict=True):
                rows.append(GainEntry(name, int(r) + 1, int(c) + 1, float(mat[r, c])))
    return rows


@dataclass
class RunResults:
    """Everything a verb may emit.

    Attributes:
        trace: Simulation trace, if a run happened.
        summary: Per-DG summary rows.
        eigen: (scenario tag, eigenvalue) pairs.
        gains: Exported observer gain entries.
        ranking: Attack search results, best first.
        opf: OPF report of a dispatch.
    """

    trace: SimTrace | None = None
    summary: list[SummaryRow] = field(default_factory=list)
    eigen: list[tuple[str, complex]] = field(default_factory=list)
    gains: list[GainEntry] = field(default_factory=list)
    ranking: list[RankedAttack] = field(default_factory=list)
    opf: OpfReport | None = None


@contextmanager
def _sink(output_path: str | None) -> Iterator[TextIO]:
    if output_path is None:
        yield sys.stdout
        return
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        yield f


def _write_csv(
    output_path: str | None, header: Sequence[str], rows: Iterable[Sequence[str]]
) -> None:
    with _sink(output_path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


class OutputFormatter(ABC):
    """Abstract base class for formatting run results."""

    @abstractmethod
    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Format and output the results.

        Args:
            results: The results to format
            output_path: Optional path for file output; stdout when omitted
        """


class TraceCsvFormatter(OutputFormatter):
    """One row per recorded sample and DG."""

    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Write the trace CSV."""
        trace = results.trace
        if trace is None:
            raise ValueError("no trace to format")

        def rows() -> Iterator[list[str]]:
            for k in range(trace.n_samples):
                t = fmt(trace.times[k])
                for i in range(trace.n_dg):
                    yield [
                        t, str(i + 1),
                        *(fmt(v) for v in trace.states[k, i]),
                        fmt(trace.r_norm[k, i]), fmt(trace.eta[k, i]),
                        str(int(trace.detected[k, i])),
                        str(int(trace.mitigated[k, i])),
                    ]

        _write_csv(output_path, TRACE_HEADER, rows())


class SummaryCsvFormatter(OutputFormatter):
    """Per-DG deviations, detections and stability margin."""

    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Write the summary CSV."""
        rows = (
            [
                str(r.dg), fmt(r.peak_v_dev), fmt(r.peak_w_dev), str(r.detections),
                fmt(r.detection_latency), fmt(r.eig_margin),
            ]
            for r in results.summary
        )
        _write_csv(output_path, SUMMARY_HEADER, rows)


class EigenCsvFormatter(OutputFormatter):
    """Eigenvalues tagged by scenario."""

    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Write the eigenvalue CSV."""
        rows = ([fmt(v.real), fmt(v.imag), tag] for tag, v in results.eigen)
        _write_csv(output_path, EIGEN_HEADER, rows)


class GainCsvFormatter(OutputFormatter):
    """Nonzero observer gain entries."""

    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Write the gain CSV."""
        rows = (
            [g.gain, str(g.row), str(g.col), fmt(g.value)] for g in results.gains
        )
        _write_csv(output_path, GAIN_HEADER, rows)


class SearchCsvFormatter(OutputFormatter):
    """Ranked attack candidates."""

    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Write the ranking CSV."""
        rows = (
            [
                str(rank), fmt(r.objective), str(int(r.evaded)),
                fmt(r.params.rate_b), fmt(r.params.scale), fmt(r.params.shift),
            ]
            for rank, r in enumerate(results.ranking, start=1)
        )
        _write_csv(output_path, SEARCH_HEADER, rows)


class TextFormatter(OutputFormatter):
    """Human-readable summary on stdout."""

    def format_results(
        self, results: RunResults, output_path: str | None = None
    ) -> None:
        """Print whatever the results hold."""
        # output_path is ignored for text formatter (always prints to stdout)
        _ = output_path

        for r in results.summary:
            latency = (
                "-" if r.detection_latency is None else f"{r.detection_latency:.4f} s"
            )
            print(
                f"DG{r.dg}: peak |Δv| {r.peak_v_dev:.4g} V, "
                f"peak |Δω| {r.peak_w_dev:.4g} rad/s, "
                f"{r.detections} detections, latency {latency}"
            )
        if results.summary:
            print(f"stability margin: {results.summary[0].eig_margin:.4g} 1/s")

        tags: dict[str, list[complex]] = {}
        for tag, v in results.eigen:
            tags.setdefault(tag, []).append(v)
        for tag, values in tags.items():
            margin = -max(v.real for v in values)
            print(f"{tag}: {len(values)} eigenvalues, margin {margin:.4g} 1/s")

        for rank, r in enumerate(results.ranking, start=1):
            mark = "evaded" if r.evaded else "detected"
            p = r.params
            print(
                f"#{rank}: objective {r.objective:.6g} ({mark}) "
                f"b={p.rate_b:.4g} scale={p.scale:.4g} shift={p.shift:.4g}"
            )

        if results.opf is not None:
            print(results.opf.format_summary())
