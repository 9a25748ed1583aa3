"""
Step player shared by the Streamlit pages: autoplay, speed, First/Prev/Next/Last
and the explanation box next to the rendered step
"""

import time

import matplotlib.pyplot as plt
import streamlit as st


def _show_step(steps, i, render_fn, fixed_height=False):
    step_data = steps[i]
    col_graph, col_expl = st.columns([7, 3])
    with col_graph:
        fig = render_fn(step_data)
        st.pyplot(fig)
        plt.close(fig)
    with col_expl:
        st.markdown(f"**Step {i + 1}/{len(steps)}**")
        st.markdown(f"**Action:** {step_data['type'].replace('_', ' ').title()}")
        explanation = step_data.get('explanation', '').replace('\n', '<br>')
        height = " height: 350px; overflow-y: auto;" if fixed_height else ""
        st.markdown(f"""
            <div style="background-color: #F8F9FA; padding: 15px; border-radius: 5px; border: 1px solid #DEE2E6; font-size: 14px; line-height: 1.5;{height}">
            {explanation}
            </div>
        """, unsafe_allow_html=True)


def render_step_player(prefix, steps, render_fn):
    """
    Step through recorded steps

    Args:
        prefix: session_state key prefix of the calling page
        steps: list of step dicts with 'type' and 'explanation'
        render_fn: step dict -> matplotlib figure
    """
    if not steps:
        st.warning("Please run the algorithm first.")
        return

    key_step = f"{prefix}_current_step"
    key_play = f"{prefix}_trigger_autoplay"
    key_speed = f"{prefix}_autoplay_speed"
    st.session_state.setdefault(key_step, 0)
    st.session_state.setdefault(key_play, False)
    st.session_state.setdefault(key_speed, 0.5)

    total_steps = len(steps)
    current = min(max(st.session_state[key_step], 0), total_steps - 1)
    st.session_state[key_step] = current

    col1, col2, col3, col4, col5, col6 = st.columns([2, 2, 1, 1, 1, 1])
    with col1:
        if st.button("▶️ Autoplay", use_container_width=True, type="primary", key=f"{prefix}_autoplay",
                     help="Play steps automatically."):
            st.session_state[key_play] = True
    with col2:
        speed = st.select_slider("Speed", options=[0.2, 0.5, 1.0, 1.5], value=st.session_state[key_speed],
                                 format_func=lambda x: f"{x}s", label_visibility="collapsed",
                                 key=f"{prefix}_speed")
    with col3:
        if st.button("⏮️ First", use_container_width=True, key=f"{prefix}_first", disabled=current == 0):
            st.session_state[key_step] = 0
            st.rerun()
    with col4:
        if st.button("⏪ Prev", use_container_width=True, key=f"{prefix}_prev", disabled=current == 0):
            st.session_state[key_step] -= 1
            st.rerun()
    with col5:
        if st.button("Next ⏩", use_container_width=True, key=f"{prefix}_next",
                     disabled=current == total_steps - 1):
            st.session_state[key_step] += 1
            st.rerun()
    with col6:
        if st.button("Last ⏭️", use_container_width=True, key=f"{prefix}_last",
                     disabled=current == total_steps - 1):
            st.session_state[key_step] = total_steps - 1
            st.rerun()

    st.progress((current + 1) / total_steps, text=f"Step {current + 1} of {total_steps}")
    graph_container = st.empty()

    if st.session_state[key_play]:
        st.session_state[key_play] = False
        for i in range(current, total_steps):
            with graph_container.container():
                _show_step(steps, i, render_fn)
            if i < total_steps - 1:
                time.sleep(speed)
        st.session_state[key_step] = total_steps - 1
        st.rerun()
    else:
        with graph_container.container():
            _show_step(steps, current, render_fn, fixed_height=True)
