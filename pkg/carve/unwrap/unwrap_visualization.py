"""
UV Unwrapping Visualization Layer
Atlas layout and chart rendering (no Streamlit UI)
"""

import matplotlib.pyplot as plt
import matplotlib.patches as patches
import numpy as np

from carve.unwrap.unwrap_core import part_name

CHART_COLORS = ['#E3F2FD', '#FCE4EC', '#E8F5E9', '#FFF3E0', '#EDE7F6', '#E0F7FA']


class AtlasRenderer:
    """Renders shelf packing steps and packed atlases"""

    @staticmethod
    def render_step(step_data, labels=None):
        """
        Render a single packing step

        Args:
            step_data: Step information dict from ShelfPacker
            labels: optional part label per chart index

        Returns:
            Matplotlib figure
        """
        shelves = step_data.get('shelves_state', [])
        size = step_data.get('atlas_size', 1)
        gutter = step_data.get('gutter', 0)
        active_shelf_idx = step_data.get('active_shelf_idx')
        chart_idx = step_data.get('chart_idx')
        chart_size = step_data.get('chart_size')
        step_type = step_data.get('type')

        fig, ax = plt.subplots(figsize=(10, 5))
        fig.patch.set_facecolor('#F5F5F5')
        ax.set_facecolor('#FAFAFA')

        ax.add_patch(patches.Rectangle((0, 0), size, size, fill=False, edgecolor='#9E9E9E', lw=2))

        for j, shelf in enumerate(shelves):
            is_active = (j == active_shelf_idx)
            if is_active and step_type in ('place_chart', 'new_shelf'):
                line_color, line_width = '#4CAF50', 3
            elif is_active and step_type == 'check_shelf':
                line_color, line_width = '#2196F3', 3
            else:
                line_color, line_width = '#BDBDBD', 1

            y0, h = shelf['y0'], shelf['height']
            ax.add_patch(patches.Rectangle(
                (gutter, y0), size - 2 * gutter, h, fill=False, edgecolor=line_color, lw=line_width
            ))
            ax.text(-size * 0.02, y0 + h / 2, f"Shelf {j + 1}", ha='right', va='center', fontsize=9)

            x = gutter
            for i in shelf['charts']:
                w, ch = step_data['sizes'][i]
                ax.add_patch(patches.Rectangle(
                    (x, y0), w, ch, linewidth=1, edgecolor='black',
                    facecolor=CHART_COLORS[i % len(CHART_COLORS)]
                ))
                name = part_name(labels[i]) if labels is not None else f"{i + 1}"
                ax.text(x + w / 2, y0 + ch / 2, name, ha='center', va='center', fontsize=8)
                x += w + gutter

        if chart_size is not None and step_type in ('evaluate_chart', 'check_shelf'):
            w, h = chart_size
            ax.add_patch(patches.Rectangle(
                (size * 1.05, 0), w, h, linewidth=2, edgecolor='#FF9800',
                facecolor='#FFE0B2', linestyle='--'
            ))
            ax.text(size * 1.05 + w / 2, h + size * 0.02, f"Incoming\nchart {chart_idx + 1}",
                    ha='center', va='top', fontsize=9, fontweight='bold', color='#FF9800')

        ax.set_xlim(-size * 0.15, size * 1.6)
        ax.set_ylim(size * 1.05, -size * 0.05)
        ax.set_aspect('equal')
        ax.axis('off')
        plt.tight_layout()
        return fig

    @staticmethod
    def render_layout(layout, texels=None):
        """
        Render final chart boxes, over the atlas texels when given

        Args:
            layout: AtlasLayout
            texels: optional (S, S, 3) atlas image

        Returns:
            Matplotlib figure
        """
        fig, ax = plt.subplots(figsize=(6, 6))
        fig.patch.set_facecolor('#F5F5F5')
        size = layout.size
        if texels is not None:
            ax.imshow(np.clip(texels, 0.0, 1.0), extent=(0, size, size, 0), interpolation='nearest')
        for k, ((x0, y0, w, h), label) in enumerate(zip(layout.chart_boxes, layout.labels)):
            ax.add_patch(patches.Rectangle(
                (x0, y0), w, h, linewidth=1.5, edgecolor='black',
                facecolor='none' if texels is not None else CHART_COLORS[k % len(CHART_COLORS)]
            ))
            ax.text(x0 + w / 2, y0 + h / 2, part_name(label), ha='center', va='center', fontsize=9)
        ax.set_xlim(0, size)
        ax.set_ylim(size, 0)
        ax.set_aspect('equal')
        ax.axis('off')
        plt.tight_layout()
        return fig

    @staticmethod
    def render_uvs(mesh):
        """Wireframe of the mesh's UV triangles in atlas space"""
        fig, ax = plt.subplots(figsize=(6, 6))
        uv = mesh.uvs
        tris = uv[mesh.faces]
        colors = None
        if mesh.part_labels is not None:
            colors = [CHART_COLORS[l % len(CHART_COLORS)] for l in mesh.part_labels[mesh.faces[:, 0]]]
        for k, tri in enumerate(tris):
            ax.add_patch(patches.Polygon(
                tri, closed=True, lw=0.3, edgecolor='#424242',
                facecolor=colors[k] if colors else 'none'
            ))
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_aspect('equal')
        ax.axis('off')
        plt.tight_layout()
        return fig
