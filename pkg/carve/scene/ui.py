"""
3D Instantiation UI
4-tab wizard (Introduction, Input, Run, Results)
"""

import tempfile
from pathlib import Path

import streamlit as st

from carve.core_io.io_formats import load_skeleton
from carve.core_io.primitives import example_skeleton
from carve.errors import CarveError
from carve.step_player import render_step_player

from .scene_core import PoseSheetBuilder, RigSpec, RigSpecValidator
from .scene_visualization import SceneRenderer

# ============================================================================
# INITIALIZE STATE
# ============================================================================

def init_scene_state():
    if 'scene_skeleton' not in st.session_state:
        st.session_state.scene_skeleton = example_skeleton()
    if 'scene_spec' not in st.session_state:
        st.session_state.scene_spec = RigSpec(image_size=128)
    if 'scene_steps_history' not in st.session_state:
        st.session_state.scene_steps_history = []
    if 'scene_rig' not in st.session_state:
        st.session_state.scene_rig = None


def _reset_run():
    st.session_state.scene_steps_history = []
    st.session_state.scene_rig = None
    st.session_state.scene_current_step = 0

# ============================================================================
# TABS
# ============================================================================

def render_scene_introduction():
    col1, col2 = st.columns([7, 3])
    with col1:
        st.markdown("""
        ### 3D Instantiation

        **Concept:**
        A character is first generated as a set of consistent views. The views are
        conditioned on a skeleton drawn from each camera of a fixed rig.

        **Rules:**
        - $K$ cameras sit on a horizontal circle of radius $r$ around the target.
        - Azimuths are evenly spaced from the start to the end angle (both included).
        - The camera closest to $0°$ is tagged **front**, the one closest to $180°$ **back**.
        - Every view gets a skeleton projection with a fixed per-joint color palette.
        - The $K$ projections are placed side by side into one pose sheet.
        """)
    with col2:
        st.info("""
        **Workflow:**

        1. **Input** tab
           Pick the skeleton and rig.

        2. **Run** tab
           Build the rig and project.

        3. **Results** tab
           Step through each view.
        """)


def render_scene_input_tab():
    col1, col2 = st.columns([1, 1])
    with col1:
        st.markdown("**Camera Rig**")
        k_views = st.slider("Number of views (K)", min_value=1, max_value=12, value=st.session_state.scene_spec.k_views)
        radius = st.slider("Radius", min_value=1.0, max_value=5.0, value=float(st.session_state.scene_spec.radius), step=0.1)
        az_range = st.slider("Azimuth range (degrees)", min_value=0.0, max_value=360.0,
                             value=(float(st.session_state.scene_spec.azimuth_start),
                                    float(st.session_state.scene_spec.azimuth_end)), step=5.0)
        image_size = st.select_slider("Image size", options=[64, 96, 128, 192, 256], value=128)
        mirror = st.checkbox("Mirror to 360 degrees", value=st.session_state.scene_spec.mirror_to_360)
        if st.button("📐 Apply Rig", use_container_width=True):
            spec = RigSpec(k_views, radius, az_range[0], az_range[1], image_size, mirror_to_360=mirror)
            is_valid, message = RigSpecValidator.validate(spec)
            if is_valid:
                st.session_state.scene_spec = spec
                _reset_run()
                st.success(message)
            else:
                st.error(message)

    with col2:
        st.markdown("**Skeleton**")
        if st.button("🦴 Use Shipped T-Pose", use_container_width=True):
            st.session_state.scene_skeleton = example_skeleton()
            _reset_run()
            st.success("Loaded the shipped skeleton.")
        uploaded = st.file_uploader("Or upload a skeleton JSON", type=["json"])
        if uploaded is not None and st.button("📝 Load Skeleton", use_container_width=True):
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / "skeleton.json"
                path.write_bytes(uploaded.getvalue())
                try:
                    st.session_state.scene_skeleton = load_skeleton(path)
                    _reset_run()
                    st.success("Skeleton loaded!")
                except CarveError as exc:
                    st.error(str(exc))

    st.markdown("---")
    spec = st.session_state.scene_spec
    st.info(f"**Current rig:** {spec.k_views} views, radius {spec.radius}, "
            f"azimuth {spec.azimuth_start}° to {spec.azimuth_end}°, {spec.image_size} px | "
            f"**Skeleton:** {len(st.session_state.scene_skeleton.joints)} joints")


def render_scene_run_tab():
    col1, col2 = st.columns([3, 7])
    with col1:
        st.markdown("### Problem Info")
        st.metric("Views", st.session_state.scene_spec.k_views)
        st.metric("Joints", len(st.session_state.scene_skeleton.joints))
    with col2:
        if not st.session_state.scene_steps_history:
            st.markdown("### Ready to Run")
            if st.button("▶️ Build Rig and Pose Sheet", type="primary", use_container_width=True):
                with st.spinner("Projecting skeleton..."):
                    builder = PoseSheetBuilder(st.session_state.scene_skeleton, st.session_state.scene_spec)
                    try:
                        rig, _, _ = builder.run()
                    except CarveError as exc:
                        st.error(str(exc))
                        return
                    st.session_state.scene_rig = rig
                    st.session_state.scene_steps_history = builder.get_steps()
                    st.session_state.scene_current_step = 0
                st.rerun()
        else:
            st.markdown("### Algorithm Complete")
            tags = [cam.view_tag.value for cam in st.session_state.scene_rig]
            st.success(f"Finished! {len(tags)} cameras, tags: {', '.join(tags)}.")
            if st.button("🔁 Run Again", use_container_width=True):
                _reset_run()
                st.rerun()


def render_scene_results_tab():
    render_step_player('scene', st.session_state.scene_steps_history, SceneRenderer.render_step)

# ============================================================================
# MAIN PAGE
# ============================================================================

def render_instantiation():
    init_scene_state()
    st.markdown("## 🎥 3D Instantiation")
    tab1, tab2, tab3, tab4 = st.tabs(["📖 Introduction", "📥 Input", "⚙️ Run", "📊 Results"])
    with tab1:
        render_scene_introduction()
    with tab2:
        render_scene_input_tab()
    with tab3:
        render_scene_run_tab()
    with tab4:
        render_scene_results_tab()
