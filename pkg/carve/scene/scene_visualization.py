"""
3D Instantiation Visualization Layer
Rig layout and pose image rendering (no Streamlit UI)
"""

import matplotlib.pyplot as plt
import numpy as np

from carve.core_io.io_core import ViewTag

TAG_COLORS = {ViewTag.FRONT: '#4CAF50', ViewTag.BACK: '#2196F3', ViewTag.OTHER: '#9E9E9E'}


class SceneRenderer:
    """Renders instantiation steps"""

    @staticmethod
    def draw_rig(ax, rig, active_idx=None):
        """Top-down view (x right, z down the page) of camera positions around the target"""
        ax.set_facecolor('#FAFAFA')
        ax.plot(0, 0, marker='*', markersize=14, color='#FF9800')
        for j, cam in enumerate(rig):
            x, _, z = cam.position
            tx, _, tz = cam.look_at
            color = TAG_COLORS[cam.view_tag]
            size = 12 if j == active_idx else 8
            ax.plot(x, z, 'o', color=color, markersize=size,
                    markeredgecolor='black' if j == active_idx else color)
            ax.annotate('', xy=(x + 0.25 * (tx - x), z + 0.25 * (tz - z)), xytext=(x, z),
                        arrowprops=dict(arrowstyle='->', color=color, lw=1.5))
            ax.text(x * 1.12, z * 1.12, f"{j + 1}", ha='center', va='center', fontsize=9, fontweight='bold')
        r = max(np.hypot(c.position[0], c.position[2]) for c in rig) if len(rig) else 1.0
        ax.set_xlim(-1.3 * r, 1.3 * r)
        ax.set_ylim(1.3 * r, -1.3 * r)
        ax.set_aspect('equal')
        ax.set_title("Camera rig (top view)", fontsize=10)
        ax.axis('off')

    @staticmethod
    def render_step(step_data):
        """
        Render a single instantiation step

        Args:
            step_data: Step information dict from PoseSheetBuilder

        Returns:
            Matplotlib figure
        """
        rig = step_data.get('rig')
        pose = step_data.get('pose')
        step_type = step_data.get('type')

        if step_type == 'complete' and pose is not None:
            fig, ax = plt.subplots(figsize=(12, 3))
            fig.patch.set_facecolor('#F5F5F5')
            ax.imshow(np.clip(pose.data, 0.0, 1.0))
            ax.set_title("Pose sheet", fontsize=10)
            ax.axis('off')
            plt.tight_layout()
            return fig

        fig, (ax_rig, ax_img) = plt.subplots(1, 2, figsize=(10, 5))
        fig.patch.set_facecolor('#F5F5F5')
        if rig is not None:
            SceneRenderer.draw_rig(ax_rig, rig, step_data.get('view_idx'))
        else:
            ax_rig.axis('off')
        if pose is not None:
            ax_img.imshow(np.clip(pose.data, 0.0, 1.0))
            ax_img.set_title(f"View {step_data['view_idx'] + 1}", fontsize=10)
        ax_img.axis('off')
        plt.tight_layout()
        return fig
