"""
Geometric Sculpting Visualization Layer
Loss traces and rendered/target normal maps (no Streamlit UI)
"""

import matplotlib.pyplot as plt
import numpy as np


def plot_loss_trace(ax, losses, iteration=None, label="loss", log_scale=True):
    """Loss curve with the current iteration marked"""
    ax.set_facecolor('#FAFAFA')
    if len(losses):
        xs = np.arange(len(losses))
        values = np.maximum(np.asarray(losses, dtype=np.float64), 1e-300)
        ax.plot(xs, values, color='#2196F3', lw=1.5, label=label)
        if iteration is not None and 0 <= iteration < len(losses):
            ax.plot(iteration, values[iteration], 'o', color='#FF9800', markersize=8)
        if log_scale and np.all(values > 0):
            ax.set_yscale('log')
    ax.set_xlabel("iteration")
    ax.set_ylabel(label)
    ax.grid(alpha=0.3)


class SculptRenderer:
    """Renders sculpting steps"""

    @staticmethod
    def render_step(step_data, losses=()):
        """
        Render a single sculpting step

        Args:
            step_data: Step information dict from Sculptor
            losses: full loss trace of the run

        Returns:
            Matplotlib figure
        """
        rendered = step_data.get('rendered')
        target = step_data.get('target')

        if rendered is None or target is None:
            fig, ax = plt.subplots(figsize=(10, 4))
            fig.patch.set_facecolor('#F5F5F5')
            plot_loss_trace(ax, losses, step_data.get('iteration'), "normal loss")
            plt.tight_layout()
            return fig

        fig, axes = plt.subplots(1, 3, figsize=(13, 4))
        fig.patch.set_facecolor('#F5F5F5')
        plot_loss_trace(axes[0], losses, step_data.get('iteration'), "normal loss")
        for ax, plane, title in ((axes[1], rendered, "Rendered normals"), (axes[2], target, "Target normals")):
            ax.imshow(np.clip(plane.data, 0.0, 1.0))
            ax.set_title(title, fontsize=10)
            ax.axis('off')
        plt.tight_layout()
        return fig

    @staticmethod
    def render_view_errors(errors):
        """Bar chart of per-view mean angular error in degrees"""
        fig, ax = plt.subplots(figsize=(8, 3))
        fig.patch.set_facecolor('#F5F5F5')
        ax.bar(np.arange(1, len(errors) + 1), errors, color='#90CAF9', edgecolor='black')
        ax.set_xlabel("view")
        ax.set_ylabel("mean angular error (deg)")
        plt.tight_layout()
        return fig
