"""
Explicit Texturing UI
4-tab wizard (Introduction, Input, Run, Results) on the capsule humanoid
"""

import matplotlib.pyplot as plt
import pandas as pd
import streamlit as st

from carve.errors import CarveError
from carve.parallel import ordered_map
from carve.pipeline.gt_bundle import humanoid_mesh, part_texture
from carve.raster.raster_core import TextureAtlas
from carve.scene.scene_core import RigSpec, instantiate_rig
from carve.sculpt.sculpt_visualization import plot_loss_trace
from carve.step_player import render_step_player
from carve.unwrap.unwrap_core import cylinder_unwrap, pack_atlas, part_name, partition
from carve.unwrap.unwrap_visualization import AtlasRenderer

from .texture_core import INIT_MODES, TexConfig, TexConfigValidator, bake, render_views
from .texture_visualization import TextureRenderer

# ============================================================================
# INITIALIZE STATE
# ============================================================================

def init_texture_state():
    defaults = {
        'texture_resolution': 32,
        'texture_gamma': 5,
        'texture_k_views': 4,
        'texture_image_size': 96,
        'texture_cfg': TexConfig(iters=150, lr=0.01, atlas_size=128, record_every=10),
        'texture_result': None,
    }
    for key, value in defaults.items():
        if key not in st.session_state:
            st.session_state[key] = value


def _reset_run():
    st.session_state.texture_result = None
    st.session_state.texpack_current_step = 0
    st.session_state.texbake_current_step = 0

# ============================================================================
# TABS
# ============================================================================

def render_texture_introduction():
    col1, col2 = st.columns([7, 3])
    with col1:
        st.markdown("""
        ### Explicit Texturing

        **Concept:**
        The refined body is cut into parts, each part is unrolled around its own
        cylinder axis, the charts are packed into one atlas and the atlas texels
        are optimized so that renders match the generated color views.

        **Rules:**
        - Parts come from the part labels: body, arms and legs ($\\gamma = 5$) or the whole body ($\\gamma = 1$).
        - Each part gets $u = \\operatorname{atan2}(x, z) / 2\\pi + 0.5$ around its principal axis and $v$ from its height.
        - Charts are placed on shelves with First Fit at the largest scale that still fits.
        - The texture loss is the view reconstruction error plus total variation:
          $L = \\sum_k w_k \\, \\mathrm{MSE}_k + \\lambda \\, \\mathrm{TV}(T)$
        - Front and back views weigh more than side views.
        """)
    with col2:
        st.info("""
        **Workflow:**

        1. **Input** tab
           Choose mesh, rig and baking settings.

        2. **Run** tab
           Unwrap, pack and bake.

        3. **Results** tab
           Step through packing and baking.
        """)


def render_texture_input_tab():
    col1, col2 = st.columns([1, 1])
    cfg = st.session_state.texture_cfg
    with col1:
        st.markdown("**Mesh and Rig**")
        resolution = st.select_slider("Humanoid grid resolution", options=[24, 32, 40, 48],
                                      value=st.session_state.texture_resolution)
        gamma = st.radio("Number of parts (γ)", options=[5, 1], index=0 if st.session_state.texture_gamma == 5 else 1,
                         horizontal=True)
        k_views = st.slider("Rig views", 1, 8, st.session_state.texture_k_views)
        image_size = st.select_slider("Image size", options=[64, 96, 128, 192], value=st.session_state.texture_image_size)
    with col2:
        st.markdown("**Baking**")
        atlas_size = st.select_slider("Atlas size", options=[64, 128, 256, 512], value=cfg.atlas_size)
        iters = st.slider("Iterations", 0, 500, cfg.iters, 10)
        lr = st.select_slider("Learning rate", options=[0.001, 0.005, 0.01, 0.02, 0.05], value=cfg.lr)
        lambda_tv = st.select_slider("TV weight (λ)", options=[0.0, 0.01, 0.1, 1.0], value=cfg.lambda_tv)
        init = st.selectbox("Initialization", INIT_MODES, index=INIT_MODES.index(cfg.init))

    if st.button("📐 Apply Settings", use_container_width=True, type="primary"):
        new_cfg = TexConfig(iters=iters, lr=lr, lambda_tv=lambda_tv, init=init, atlas_size=atlas_size,
                            record_every=max(1, iters // 15))
        is_valid, message = TexConfigValidator.validate(new_cfg)
        if not is_valid:
            st.error(message)
        else:
            st.session_state.texture_cfg = new_cfg
            st.session_state.texture_resolution = resolution
            st.session_state.texture_gamma = gamma
            st.session_state.texture_k_views = k_views
            st.session_state.texture_image_size = image_size
            _reset_run()
            st.success("Settings applied!")

    st.markdown("---")
    st.info(f"**Humanoid** at grid {st.session_state.texture_resolution}³, γ = {st.session_state.texture_gamma} | "
            f"{st.session_state.texture_k_views} views at {st.session_state.texture_image_size} px | "
            f"atlas {cfg.atlas_size}², {cfg.iters} iterations")


def _run_demo():
    cfg = st.session_state.texture_cfg
    mesh = humanoid_mesh(st.session_state.texture_resolution)
    parts = partition(mesh, st.session_state.texture_gamma)
    unwrapped = ordered_map(cylinder_unwrap, parts)
    merged, layout, pack_steps = pack_atlas(unwrapped, cfg.atlas_size, record=True)

    truth = TextureAtlas(layout.size, part_texture(layout), layout.chart_boxes)
    rig = instantiate_rig(RigSpec(st.session_state.texture_k_views, image_size=st.session_state.texture_image_size))
    targets = render_views(merged, truth, rig)
    atlas, report = bake(merged, targets, cfg, layout)
    rendered = render_views(merged, atlas, rig)
    return {
        'layout': layout,
        'pack_steps': pack_steps,
        'truth': truth,
        'targets': targets,
        'atlas': atlas,
        'report': report,
        'rendered': rendered,
    }


def render_texture_run_tab():
    col1, col2 = st.columns([3, 7])
    cfg = st.session_state.texture_cfg
    with col1:
        st.markdown("### Problem Info")
        st.metric("Parts", st.session_state.texture_gamma)
        st.metric("Views", st.session_state.texture_k_views)
        st.metric("Atlas texels", cfg.atlas_size ** 2)
    with col2:
        result = st.session_state.texture_result
        if result is None:
            st.markdown("### Ready to Run")
            if st.button("▶️ Unwrap and Bake", type="primary", use_container_width=True):
                with st.spinner("Baking texture..."):
                    try:
                        st.session_state.texture_result = _run_demo()
                    except CarveError as exc:
                        st.error(str(exc))
                        return
                    st.session_state.texpack_current_step = 0
                    st.session_state.texbake_current_step = 0
                st.rerun()
        else:
            report = result['report']
            st.markdown("### Algorithm Complete")
            st.success(f"Finished! Observed {report.observed_fraction:.1%} of the atlas, "
                       f"filled {report.filled_texels} texels.")
            st.dataframe(pd.DataFrame(report.view_psnr), hide_index=True)
            if st.button("🔁 Run Again", use_container_width=True):
                _reset_run()
                st.rerun()


def render_texture_results_tab():
    result = st.session_state.texture_result
    if result is None:
        st.warning("Please run the algorithm first.")
        return
    layout, report = result['layout'], result['report']

    st.markdown("#### Chart packing")
    render_step_player('texpack', result['pack_steps'],
                       lambda step: AtlasRenderer.render_step(step, layout.labels))

    st.markdown("#### Baking")
    render_step_player('texbake', report.steps, lambda step: TextureRenderer.render_step(step, report.losses))

    st.markdown("#### Atlas")
    col1, col2 = st.columns([1, 1])
    with col1:
        fig = AtlasRenderer.render_layout(layout, result['atlas'].texels)
        st.pyplot(fig)
        plt.close(fig)
        st.caption(", ".join(f"{i + 1}: {part_name(label, len(layout.labels))}"
                             for i, label in enumerate(layout.labels)))
    with col2:
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_loss_trace(ax, report.losses, None, "texture loss")
        st.pyplot(fig)
        plt.close(fig)

    st.markdown("#### Rendered (top) against target (bottom)")
    titles = [f"{cam.view_tag.value} {j + 1}" for j, cam in enumerate(v.camera for v in result['targets'])]
    fig = TextureRenderer.render_views([v.image for v in result['rendered']],
                                       [v.image for v in result['targets']], titles)
    st.pyplot(fig)
    plt.close(fig)

# ============================================================================
# MAIN PAGE
# ============================================================================

def render_texturing():
    init_texture_state()
    st.markdown("## 🎨 Explicit Texturing")
    tab1, tab2, tab3, tab4 = st.tabs(["📖 Introduction", "📥 Input", "⚙️ Run", "📊 Results"])
    with tab1:
        render_texture_introduction()
    with tab2:
        render_texture_input_tab()
    with tab3:
        render_texture_run_tab()
    with tab4:
        render_texture_results_tab()
