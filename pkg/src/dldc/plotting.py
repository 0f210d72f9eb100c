"""PNG rendering of experiment figures (Agg backend, fixed style)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.0,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def render(path, draw, size=(7.0, 3.0)) -> None:
    """Create a figure, let ``draw(fig)`` populate it and save it to ``path``."""
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=size)
        try:
            draw(fig)
            fig.tight_layout()
            fig.savefig(path, metadata={"Software": None})
        finally:
            plt.close(fig)
