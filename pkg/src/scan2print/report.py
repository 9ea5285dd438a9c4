"""Plain-text run reports and the figures that go with them.

The text report is the authoritative record: stage timings in execution
order, per-pair alignment fitness, and the mesh audit. The figures are
the same numbers drawn with matplotlib for quick visual inspection.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

__all__ = ["render_report", "audit_text", "write_figures"]


def audit_text(audit) -> str:
    """Audit counts as `key: value` lines, one per counter."""
    return (
        f"boundary_edges: {audit.boundary_edges}\n"
        f"non_manifold_edges: {audit.non_manifold_edges}\n"
        f"euler_characteristic: {audit.euler_characteristic}\n"
        f"components: {audit.components}\n"
    )


def render_report(run) -> str:
    """Render a PipelineRun as the report.txt payload."""
    lines = ["reconstruction report", "====================="]
    lines.append(f"status: {'FAILED: ' + run.error if run.error else 'ok'}")
    lines.append(f"mesher: {run.config.mesher}")
    lines.append("")

    lines.append("stage timings")
    lines.append("-------------")
    width = max((len(name) for name, _ in run.timings), default=5)
    for name, seconds in run.timings:
        note = run.notes.get(name, "")
        entry = f"{name:<{width}}  {seconds:9.3f} s"
        lines.append(f"{entry}  {note}" if note else entry)
    lines.append("")

    if run.alignment is not None and run.alignment.pair_fitness:
        lines.append("alignment")
        lines.append("---------")
        lines.append("pair  fitness_m2")
        for i, fit in enumerate(run.alignment.pair_fitness, start=1):
            lines.append(f"{i:<4d}  {fit:.6e}")
        lines.append("")

    if run.audit is not None:
        lines.append("audit")
        lines.append("-----")
        lines.append(audit_text(run.audit).rstrip("\n"))
        lines.append("")

    return "\n".join(lines) + "\n"


def write_figures(run, out_dir) -> list[Path]:
    """Draw the fitness and timing charts next to the text report."""
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if run.alignment is not None and run.alignment.pair_fitness:
        fig, ax = plt.subplots(figsize=(6.0, 3.5))
        pairs = range(1, len(run.alignment.pair_fitness) + 1)
        ax.plot(pairs, run.alignment.pair_fitness, marker="o", linewidth=1.0)
        ax.set_xlabel("cloud pair")
        ax.set_ylabel("fitness (m^2)")
        ax.set_yscale("log")
        ax.set_title("per-pair alignment fitness")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / "report_fitness.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    if run.timings:
        fig, ax = plt.subplots(figsize=(6.0, 3.5))
        names = [name for name, _ in run.timings]
        seconds = [s for _, s in run.timings]
        ax.barh(range(len(names)), seconds)
        ax.set_yticks(range(len(names)), names)
        ax.invert_yaxis()
        ax.set_xlabel("seconds")
        ax.set_title("stage timings")
        fig.tight_layout()
        path = out_dir / "report_timings.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    return written
