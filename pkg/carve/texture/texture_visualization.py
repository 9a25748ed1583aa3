"""
Explicit Texturing Visualization Layer
"""

import matplotlib.pyplot as plt
import numpy as np

from carve.sculpt.sculpt_visualization import plot_loss_trace


class TextureRenderer:
    """Renders baking steps, atlases and per-view comparisons"""

    @staticmethod
    def render_step(step_data, losses=()):
        fig, ax = plt.subplots(figsize=(10, 4))
        fig.patch.set_facecolor('#F5F5F5')
        plot_loss_trace(ax, losses, step_data.get('iteration'), "texture loss")
        plt.tight_layout()
        return fig

    @staticmethod
    def render_views(rendered, targets, titles=None):
        """Rendered (top row) against target (bottom row) color images"""
        k = len(rendered)
        fig, axes = plt.subplots(2, k, figsize=(2.2 * k, 4.6), squeeze=False)
        fig.patch.set_facecolor('#F5F5F5')
        for j in range(k):
            for row, plane in ((0, rendered[j]), (1, targets[j])):
                axes[row, j].imshow(np.clip(plane.data, 0.0, 1.0))
                axes[row, j].axis('off')
            if titles:
                axes[0, j].set_title(titles[j], fontsize=9)
        plt.tight_layout()
        return fig
