"""
Carve Viewer
Step-by-step views of the three pipeline stages:

carve/
  scene/    rig and pose sheet      (render_instantiation)
  sculpt/   SDF sculpting            (render_sculpting)
  texture/  unwrap, pack and bake    (render_texturing)
"""

import importlib
import traceback

import streamlit as st

from carve.log import setup_logging

st.set_page_config(
    page_title="Carve Viewer",
    page_icon="🗿",
    layout="wide",
    initial_sidebar_state="expanded"
)

st.markdown("""
<style>
#MainMenu {visibility: hidden;}
footer {visibility: hidden;}

.empty-state {
    text-align: center;
    padding: 6rem 2rem;
    color: #6c757d;
}
.empty-state h2 {
    font-size: 2rem;
    margin-bottom: 1rem;
    color: #495057;
    font-weight: 600;
}
.empty-state p {
    font-size: 1.1rem;
    line-height: 1.6;
}

[data-testid="stSidebar"] {
    background: linear-gradient(180deg, #37474F 0%, #263238 100%);
}
[data-testid="stSidebar"] * {
    color: #ECEFF1 !important;
}
.sidebar-title {
    font-size: 1.4rem;
    font-weight: 700;
    padding: 1.2rem 0;
    text-align: center;
    border-bottom: 2px solid rgba(255,255,255,0.2);
    margin-bottom: 1.2rem;
}
.sidebar-section h3 {
    font-size: 0.85rem;
    font-weight: 700;
    margin: 1.2rem 0 0.6rem 0;
    text-transform: uppercase;
    letter-spacing: 1px;
}

.stButton > button {
    width: 100%;
    border-radius: 8px;
    font-weight: 500;
    transition: all 0.2s;
}
[data-testid="stSidebar"] .stButton > button {
    background-color: rgba(255,255,255,0.08);
    border: 1px solid rgba(255,255,255,0.3) !important;
    text-align: left;
}
[data-testid="stSidebar"] .stButton > button:hover {
    background-color: rgba(255,255,255,0.18);
    transform: translateX(4px);
}
</style>
""", unsafe_allow_html=True)

# page key -> (sidebar section, button label, module, render function)
PAGES = {
    "instantiation": ("Stage 1: 3D Instantiation", "Camera Rig and Pose Sheet",
                      "carve.scene.ui", "render_instantiation"),
    "sculpting": ("Stage 2: Geometric Sculpting", "SDF Fit and Normal Sculpting",
                  "carve.sculpt.ui", "render_sculpting"),
    "texturing": ("Stage 3: Explicit Texturing", "Unwrap, Pack and Bake",
                  "carve.texture.ui", "render_texturing"),
}


def render_empty_state():
    st.markdown("""
        <div class="empty-state">
            <h2>Select a Stage</h2>
            <p>Choose a pipeline stage from the sidebar to begin</p>
        </div>
    """, unsafe_allow_html=True)


def render_sidebar():
    with st.sidebar:
        st.markdown('<div class="sidebar-title">Carve Viewer</div>', unsafe_allow_html=True)
        for key, (section, label, _, _) in PAGES.items():
            st.markdown(f'<div class="sidebar-section"><h3>{section}</h3></div>', unsafe_allow_html=True)
            if st.button(label, use_container_width=True, key=f"btn_{key}"):
                st.session_state.current_page = key
                st.rerun()

        if st.session_state.get('current_page'):
            st.markdown("---")
            st.markdown(f"<strong>Active:</strong><br>{st.session_state.current_page.title()}",
                        unsafe_allow_html=True)


def main():
    if 'current_page' not in st.session_state:
        st.session_state.current_page = None
        setup_logging(0)

    render_sidebar()

    page = PAGES.get(st.session_state.current_page)
    if page is None:
        render_empty_state()
        return

    _, label, module_name, func_name = page
    try:
        module = importlib.import_module(module_name)
    except ImportError as e:
        st.error(f"Error: {label} page could not be loaded")
        st.code(str(e))
        st.code(traceback.format_exc())
        return
    getattr(module, func_name)()


if __name__ == "__main__":
    main()
