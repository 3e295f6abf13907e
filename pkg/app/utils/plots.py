from typing import Sequence

import numpy as np
import plotly.graph_objects as go  # type: ignore[import-untyped]
import plotly.io as pio  # type: ignore[import-untyped]
from plotly.subplots import make_subplots  # type: ignore[import-untyped]

from app.internal.constants import (
    CONVERGENT_COLOR,
    EXACT_COLOR,
    FIT_COLOR,
    LOG_DIVERGENT_COLOR,
    POWER_DIVERGENT_COLOR,
)
from app.services.analyzer import SobolevScanReport
from app.services.fields import ScalarField2D
from app.services.oned import OneDSolution
from app.services.viscous import ContinuationReport
from app.storage import StorageBackend
from app.utils.fitting import Verdict

pio.templates.default = "plotly_white"

VERDICT_COLORS = {
    Verdict.CONVERGENT: CONVERGENT_COLOR,
    Verdict.LOG_DIVERGENT: LOG_DIVERGENT_COLOR,
    Verdict.POWER_DIVERGENT: POWER_DIVERGENT_COLOR,
}


def _save(fig: go.Figure, storage: StorageBackend, filepath: str):
    storage.write_text(fig.to_html(include_plotlyjs="cdn"), filepath)


def _scan_label(report: SobolevScanReport) -> str:
    if report.s is not None:
        return f"s={report.s:g}"
    return f"alpha={report.alpha:g}, p={report.p:g}"


def scan_plot(
    reports: Sequence[SobolevScanReport],
    storage: StorageBackend,
    filepath: str,
) -> go.Figure:
    """Scanned integrals against ``log2(1/h)``, coloured by verdict."""
    fig = go.Figure()
    for report in reports:
        level = np.log2(1.0 / np.asarray(report.mesh_sequence))
        fig.add_trace(
            go.Scatter(
                x=level,
                y=report.norms,
                mode="lines+markers",
                name=f"{_scan_label(report)} ({report.verdict.value})",
                line=dict(color=VERDICT_COLORS[report.verdict]),
            )
        )
    fig.update_layout(
        title="Mesh refinement scan",
        xaxis_title="log2(1/h)",
        yaxis_title="norm",
        yaxis_type="log",
    )
    _save(fig, storage, filepath)
    return fig


def continuation_plot(
    report: ContinuationReport,
    storage: StorageBackend,
    filepath: str,
) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(
        go.Scatter(
            x=report.eps,
            y=report.sup_distances,
            mode="lines+markers",
            name="stage-to-stage sup distance",
            line=dict(color=FIT_COLOR),
        )
    )
    if report.exact_errors is not None:
        fig.add_trace(
            go.Scatter(
                x=report.eps,
                y=report.exact_errors,
                mode="lines+markers",
                name="sup error against the exact solution",
                line=dict(color=EXACT_COLOR, dash="dash"),
            )
        )
    fig.update_layout(
        title="Vanishing viscosity continuation",
        xaxis_title="eps",
        yaxis_title="sup distance",
        xaxis_type="log",
        yaxis_type="log",
    )
    _save(fig, storage, filepath)
    return fig


def field_plot(
    field: ScalarField2D,
    storage: StorageBackend,
    filepath: str,
    title: str = "u",
) -> go.Figure:
    grid = field.grid
    fig = make_subplots(rows=1, cols=1)
    # values are (x, y)-indexed, heatmaps expect rows along y
    fig.add_trace(
        go.Heatmap(x=grid.x, y=grid.y, z=field.values.T, colorscale="RdBu")
    )
    fig.update_layout(title=title, xaxis_title="x", yaxis_title="y")
    fig.update_yaxes(scaleanchor="x", scaleratio=1)
    _save(fig, storage, filepath)
    return fig


def oned_plot(
    solution: OneDSolution,
    storage: StorageBackend,
    filepath: str,
    exact: np.ndarray | None = None,
) -> go.Figure:
    fig = make_subplots(
        rows=2,
        cols=1,
        shared_xaxes=True,
        subplot_titles=("u", "u'"),
        vertical_spacing=0.08,
    )
    fig.add_trace(
        go.Scatter(
            x=solution.nodes,
            y=solution.u,
            name="u",
            line=dict(color=CONVERGENT_COLOR),
        ),
        row=1,
        col=1,
    )
    if exact is not None:
        fig.add_trace(
            go.Scatter(
                x=solution.nodes,
                y=exact,
                name="exact",
                line=dict(color=EXACT_COLOR, dash="dash"),
            ),
            row=1,
            col=1,
        )
    fig.add_trace(
        go.Scatter(
            x=solution.nodes,
            y=solution.u_prime,
            name="u'",
            line=dict(color=LOG_DIVERGENT_COLOR),
        ),
        row=2,
        col=1,
    )
    if solution.t0 is not None:
        fig.add_vline(x=solution.t0, line_dash="dot", line_color=FIT_COLOR)
    fig.update_layout(
        title=f"1-D solution '{solution.problem}' (c = {solution.c:.6g})",
        xaxis2_title="t",
    )
    _save(fig, storage, filepath)
    return fig
