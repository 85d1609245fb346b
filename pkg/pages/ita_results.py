import streamlit as st
import pandas as pd
from utils.visualizations import create_ita_chart

def show(session_state):
    """Display the ITA Results tab content"""
    st.title("🔁 Iterative Training Results")

    ita_frame = session_state.ita_frame

    if ita_frame is None or len(ita_frame) == 0:
        st.info("Upload an ITA result table (ita.tsv from `scriptine ita`) in the sidebar.")
        return

    manuscripts = ["All Manuscripts"] + sorted(ita_frame["manuscript"].astype(str).unique().tolist())
    selected = st.selectbox("Select Manuscript:", manuscripts, key="ita_manuscript")

    filtered = ita_frame.copy()
    if selected != "All Manuscripts":
        filtered = filtered[filtered["manuscript"].astype(str) == selected]

    numeric = filtered.copy()
    for column in ["pages", "fs_cer", "pt_cer", "impr_fs"]:
        numeric[column] = pd.to_numeric(numeric[column], errors="coerce")

    trained = numeric[numeric["pages"] > 0]
    col1, col2, col3 = st.columns(3)
    with col1:
        out_of_box = numeric[numeric["pages"] == 0]["pt_cer"]
        st.metric("Out-of-the-box CER", f"{out_of_box.mean():.2f}%" if out_of_box.notna().any() else "-")
    with col2:
        if trained["pt_cer"].notna().any():
            largest = trained.sort_values("pages").iloc[-1]
            st.metric(f"PT CER at {int(largest['pages'])} pages", f"{largest['pt_cer']:.2f}%")
        else:
            st.metric("PT CER", "-")
    with col3:
        mean_impr = trained["impr_fs"].mean()
        st.metric("Mean Improvement over FS", f"{mean_impr:.0f}%" if pd.notna(mean_impr) else "-")

    st.plotly_chart(create_ita_chart(numeric), use_container_width=True)

    st.subheader("Result Table")
    st.dataframe(filtered, use_container_width=True, hide_index=True)
    st.caption("Improvement columns: relative CER reduction of PT over FS and over the previous PT iteration.")
