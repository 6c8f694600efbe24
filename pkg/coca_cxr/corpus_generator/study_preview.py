"""
Study Pair Preview
------------------
Contact sheets of generated pairs: prior and current image side by side
with the gold boxes of every annotation drawn on both.
"""

import logging
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.patches as patches
import matplotlib.pyplot as plt

logger = logging.getLogger(__name__)


class StudyPreviewRenderer:
    def __init__(self):
        """Initialize the renderer colors."""
        # One color per progression label
        self.label_colors = {
            "worsened": "#E4572E",   # red
            "unchanged": "#F3A712",  # amber
            "improved": "#29BF12",   # green
        }
        self.dpi = 100

    def render(self, pairs, output_path):
        """Draw one row per pair (prior | current) and save the sheet to `output_path`."""
        pairs = list(pairs)
        if not pairs:
            return None
        fig, axes = plt.subplots(len(pairs), 2, figsize=(6, 3 * len(pairs)), squeeze=False)
        for row, pair in zip(axes, pairs):
            for ax, image, title, which in ((row[0], pair.prior_image, "prior", "box_prior"),
                                            (row[1], pair.current_image, "current", "box_current")):
                side = image.shape[0]
                ax.imshow(image, cmap="gray", vmin=0.0, vmax=1.0)
                for a in pair.annotations:
                    self._draw_box(ax, getattr(a, which), side, self.label_colors[a.progression])
                ax.set_title(f"{pair.pair_id} {title}", fontsize=8)
                ax.axis("off")
            labels = ", ".join(f"{a.condition} {a.progression}" for a in pair.annotations)
            row[1].text(1.02, 0.5, labels, transform=row[1].transAxes, fontsize=7, va="center")

        os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
        fig.tight_layout()
        fig.savefig(output_path, dpi=self.dpi, bbox_inches="tight")
        plt.close(fig)
        logger.info("✓ Preview sheet saved to %s", output_path)
        return output_path

    def _draw_box(self, ax, box, side, color):
        """Box corners are normalized; pixel centers sit at (i + 0.5) / side."""
        x = box.x1 * side - 0.5
        y = box.y1 * side - 0.5
        rect = patches.Rectangle((x, y), (box.x2 - box.x1) * side, (box.y2 - box.y1) * side,
                                 linewidth=1.2, edgecolor=color, facecolor="none")
        ax.add_patch(rect)
