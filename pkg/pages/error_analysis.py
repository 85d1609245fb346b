import streamlit as st
import pandas as pd
from utils.evaluation import ConfusionTable, compare_confusions, line_confidence, rank_uncertain_lines
from utils.visualizations import create_confidence_histogram, create_confusion_chart, create_confusion_heatmap

def _as_table(frame):
    rows = tuple(
        (str(gt), str(pred), int(count), float(percent))
        for gt, pred, count, percent in frame[["GT", "PRED", "CNT", "%"]].itertuples(index=False, name=None)
    )
    return ConfusionTable(rows, 0)

def show(session_state):
    """Display the Error Analysis tab content"""
    st.title("🔎 Error Analysis")

    confusions = session_state.confusion_frames
    predictions = session_state.predictions

    if not confusions and not predictions:
        st.info("Upload confusion tables or a prediction file in the sidebar.")
        return

    if confusions:
        st.subheader("Most Common Confusions")
        stage = st.selectbox("Select Stage:", list(confusions.keys()), key="confusion_stage")
        top_n = st.slider("Number of confusions:", min_value=5, max_value=20, value=10)
        st.plotly_chart(create_confusion_chart(confusions[stage], top_n), use_container_width=True)

        if len(confusions) > 1:
            st.subheader("Confusions across Stages")
            comparison = compare_confusions({label: _as_table(frame) for label, frame in confusions.items()})
            st.plotly_chart(create_confusion_heatmap(comparison.head(top_n)), use_container_width=True)

    if predictions:
        st.subheader("Least Confident Lines")
        scores = [line_confidence(p) for p in predictions]
        st.plotly_chart(create_confidence_histogram(scores), use_container_width=True)

        k = st.number_input("Lines to review:", min_value=1, max_value=max(1, len(predictions)), value=min(10, len(predictions)))
        uncertain = rank_uncertain_lines(predictions, int(k))
        st.dataframe(
            pd.DataFrame([
                {"Line": p.line_ref, "Text": p.chars, "Confidence": round(line_confidence(p), 3)}
                for p in uncertain
            ]),
            use_container_width=True,
            hide_index=True
        )
        st.caption("Correcting these lines first gives the next training iteration the most new information.")
