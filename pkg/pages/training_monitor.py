import streamlit as st
from utils.visualizations import create_training_curve

def show(session_state):
    """Display the Training Monitor tab content"""
    st.title("📈 Training Monitor")

    logs = session_state.training_logs

    if not logs:
        st.info("Upload JSON-lines training logs in the sidebar to follow validation CER and early stopping.")
        return

    run = st.selectbox("Select Training Run:", sorted(logs.keys()), key="training_run")
    log_frame = logs[run].reset_index(drop=True)

    if len(log_frame) == 0:
        st.warning("This log contains no evaluations.")
        return

    best_idx = log_frame["val_cer"].idxmin()
    stopped = bool(log_frame["stopped"].iloc[-1])

    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("Evaluations", f"{len(log_frame)}")
    with col2:
        st.metric("Best Val. CER", f"{log_frame.loc[best_idx, 'val_cer']:.2f}%")
    with col3:
        st.metric("Epochs", f"{int(log_frame['epoch'].max())}")
    with col4:
        st.metric("Status", "Stopped" if stopped else "Incomplete")

    st.plotly_chart(create_training_curve(log_frame, run), use_container_width=True)

    # Evaluations since the best snapshot drive early stopping
    evals_after_best = len(log_frame) - 1 - best_idx
    st.caption(
        f"The returned model is the snapshot of evaluation {best_idx + 1}; "
        f"{evals_after_best} evaluation(s) followed without improvement."
    )

    with st.expander("Raw log records"):
        st.dataframe(log_frame, use_container_width=True, hide_index=True)
