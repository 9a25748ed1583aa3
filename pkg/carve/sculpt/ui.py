"""
Geometric Sculpting UI
4-tab wizard (Introduction, Input, Run, Results) on an analytic sphere-to-ellipsoid demo
"""

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import streamlit as st

from carve.core_io.primitives import icosphere
from carve.errors import CarveError
from carve.scene.scene_core import RigSpec, instantiate_rig
from carve.sdf_fit.fit_core import fit_sdf, sample_near_surface
from carve.step_player import render_step_player
from carve.tetra.tet_core import build_grid

from .sculpt_core import AnalyticTargets, SculptConfig, SculptConfigValidator, normal_error_report, sculpt
from .sculpt_visualization import SculptRenderer

# ============================================================================
# INITIALIZE STATE
# ============================================================================

def init_sculpt_state():
    defaults = {
        'sculpt_radii': (0.4, 0.3, 0.3),
        'sculpt_sphere_radius': 0.33,
        'sculpt_resolution': 20,
        'sculpt_cfg': SculptConfig(iters=60, lr=0.01, image_size=64, record_every=5),
        'sculpt_k_views': 4,
        'sculpt_steps_history': [],
        'sculpt_report': None,
        'sculpt_fit_report': None,
        'sculpt_errors': None,
    }
    for key, value in defaults.items():
        if key not in st.session_state:
            st.session_state[key] = value


def _reset_run():
    st.session_state.sculpt_steps_history = []
    st.session_state.sculpt_report = None
    st.session_state.sculpt_fit_report = None
    st.session_state.sculpt_errors = None
    st.session_state.sculpt_current_step = 0

# ============================================================================
# TABS
# ============================================================================

def render_sculpt_introduction():
    col1, col2 = st.columns([7, 3])
    with col1:
        st.markdown("""
        ### Geometric Sculpting

        **Concept:**
        A coarse body is turned into a signed distance field on a deformable
        tetrahedral grid. The surface extracted by marching tetrahedra is rendered
        into normal maps and pulled toward target normal maps.

        **Rules:**
        - The grid SDF is first fitted to samples near the coarse mesh.
        - Each iteration renders the current surface and compares normals:
          $L = \\frac{1}{|M|}\\sum_{p \\in M} \\lVert n_r(p) - n_t(p) \\rVert^2$
        - Gradients flow through the zero crossings back to vertex SDF values and offsets.
        - Offsets stay inside half the grid spacing.

        This demo starts from a sphere and sculpts it into an ellipsoid whose exact
        normal maps come from ray casting.
        """)
    with col2:
        st.info("""
        **Workflow:**

        1. **Input** tab
           Choose the target shape and settings.

        2. **Run** tab
           Fit the grid, then sculpt.

        3. **Results** tab
           Watch the loss and normal maps.
        """)


def render_sculpt_input_tab():
    col1, col2 = st.columns([1, 1])
    with col1:
        st.markdown("**Shapes**")
        sphere_r = st.slider("Starting sphere radius", 0.2, 0.45, float(st.session_state.sculpt_sphere_radius), 0.01)
        rx = st.slider("Target radius x", 0.15, 0.5, float(st.session_state.sculpt_radii[0]), 0.01)
        ry = st.slider("Target radius y", 0.15, 0.5, float(st.session_state.sculpt_radii[1]), 0.01)
        rz = st.slider("Target radius z", 0.15, 0.5, float(st.session_state.sculpt_radii[2]), 0.01)
        resolution = st.select_slider("Grid resolution", options=[12, 16, 20, 24, 32],
                                      value=st.session_state.sculpt_resolution)
    with col2:
        st.markdown("**Optimization**")
        cfg = st.session_state.sculpt_cfg
        iters = st.slider("Iterations", 10, 300, cfg.iters, 10)
        lr = st.select_slider("Learning rate", options=[0.001, 0.002, 0.005, 0.01, 0.02], value=cfg.lr)
        k_views = st.slider("Rig views", 1, 8, st.session_state.sculpt_k_views)
        image_size = st.select_slider("Image size", options=[32, 48, 64, 96, 128], value=cfg.image_size)
        lap = st.select_slider("Laplacian weight", options=[0.0, 0.01, 0.1, 1.0], value=cfg.laplacian_weight)

    if st.button("📐 Apply Settings", use_container_width=True, type="primary"):
        new_cfg = SculptConfig(iters=iters, lr=lr, image_size=image_size, laplacian_weight=lap,
                               record_every=max(1, iters // 12))
        is_valid, message = SculptConfigValidator.validate(new_cfg)
        if not is_valid:
            st.error(message)
        else:
            st.session_state.sculpt_cfg = new_cfg
            st.session_state.sculpt_radii = (rx, ry, rz)
            st.session_state.sculpt_sphere_radius = sphere_r
            st.session_state.sculpt_resolution = resolution
            st.session_state.sculpt_k_views = k_views
            _reset_run()
            st.success("Settings applied!")

    st.markdown("---")
    radii = st.session_state.sculpt_radii
    st.info(f"**Sphere** r={st.session_state.sculpt_sphere_radius:.2f} → **Ellipsoid** "
            f"({radii[0]:.2f}, {radii[1]:.2f}, {radii[2]:.2f}) | grid {st.session_state.sculpt_resolution}³")


def _run_demo():
    cfg = st.session_state.sculpt_cfg
    grid = build_grid(st.session_state.sculpt_resolution)
    coarse = icosphere(3, st.session_state.sculpt_sphere_radius)
    samples = sample_near_surface(coarse, 4000, seed=cfg.seed, grid=grid)
    fit_report = fit_sdf(grid, samples, iters=250, lr=0.01)
    rig = instantiate_rig(RigSpec(st.session_state.sculpt_k_views, cfg.radius, 0.0, 180.0,
                                  cfg.image_size, cfg.fov_y))
    targets = AnalyticTargets(st.session_state.sculpt_radii)
    mesh, report = sculpt(grid, targets, cfg, rig=rig)
    errors = normal_error_report(mesh, [targets.targets_for(c) for c in rig])
    return fit_report, report, errors


def render_sculpt_run_tab():
    col1, col2 = st.columns([3, 7])
    with col1:
        st.markdown("### Problem Info")
        st.metric("Grid resolution", st.session_state.sculpt_resolution)
        st.metric("Iterations", st.session_state.sculpt_cfg.iters)
        st.metric("Rig views", st.session_state.sculpt_k_views)
    with col2:
        if not st.session_state.sculpt_steps_history:
            st.markdown("### Ready to Run")
            if st.button("▶️ Fit and Sculpt", type="primary", use_container_width=True):
                with st.spinner("Sculpting..."):
                    try:
                        fit_report, report, errors = _run_demo()
                    except CarveError as exc:
                        st.error(str(exc))
                        return
                    st.session_state.sculpt_fit_report = fit_report
                    st.session_state.sculpt_report = report
                    st.session_state.sculpt_errors = errors
                    st.session_state.sculpt_steps_history = report.steps
                    st.session_state.sculpt_current_step = 0
                st.rerun()
        else:
            report = st.session_state.sculpt_report
            head, tail = report.head_tail_means()
            st.markdown("### Algorithm Complete")
            st.success(f"Finished! Mean loss {head:.4g} over the first 10 iterations, "
                       f"{tail:.4g} over the last 10.")
            st.dataframe(pd.DataFrame({
                "stage": ["fit", "sculpt"],
                "iterations": [st.session_state.sculpt_fit_report.iters, report.iters],
                "final loss": [st.session_state.sculpt_fit_report.final_loss,
                               report.losses[-1] if report.losses else np.nan],
            }), hide_index=True)
            if st.button("🔁 Run Again", use_container_width=True):
                _reset_run()
                st.rerun()


def render_sculpt_results_tab():
    report = st.session_state.sculpt_report
    losses = report.losses if report else []
    render_step_player('sculpt', st.session_state.sculpt_steps_history,
                       lambda step: SculptRenderer.render_step(step, losses))
    if st.session_state.sculpt_errors:
        st.markdown("#### Mean angular error per view")
        fig = SculptRenderer.render_view_errors(st.session_state.sculpt_errors)
        st.pyplot(fig)
        plt.close(fig)

# ============================================================================
# MAIN PAGE
# ============================================================================

def render_sculpting():
    init_sculpt_state()
    st.markdown("## 🗿 Geometric Sculpting")
    tab1, tab2, tab3, tab4 = st.tabs(["📖 Introduction", "📥 Input", "⚙️ Run", "📊 Results"])
    with tab1:
        render_sculpt_introduction()
    with tab2:
        render_sculpt_input_tab()
    with tab3:
        render_sculpt_run_tab()
    with tab4:
        render_sculpt_results_tab()
