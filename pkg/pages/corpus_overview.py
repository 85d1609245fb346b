import streamlit as st
import pandas as pd
from utils.pagexml import corpus_totals
from utils.visualizations import create_corpus_chart

def show(session_state):
    """Display the Corpus Overview tab content"""
    st.title("📚 Corpus Overview")

    stats = session_state.corpus_stats

    if stats is None or len(stats) == 0:
        st.warning("No corpus loaded. Generate a demo corpus or load a PAGE directory from the sidebar.")
        return

    # Filter controls
    styles = ["All Styles"] + sorted(stats["style"].unique().tolist())
    selected_style = st.selectbox("Select Style:", styles, key="corpus_style")

    filtered = stats.copy()
    if selected_style != "All Styles":
        filtered = filtered[filtered["style"] == selected_style]

    totals = corpus_totals(filtered)

    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Manuscripts", f"{len(filtered)}")
    with col2:
        st.metric("Pages", f"{totals['pages']}")
    with col3:
        share = 100.0 * totals["transcribed"] / totals["lines"] if totals["lines"] else 0.0
        st.metric(
            "Lines",
            f"{totals['lines']}",
            help=f"{totals['transcribed']} transcribed ({share:.1f}%)"
        )

    st.plotly_chart(create_corpus_chart(filtered), use_container_width=True)

    st.subheader("Lines per Manuscript")
    summary = pd.concat([
        filtered,
        pd.DataFrame([{"manuscript": "Total", "style": "", **totals}])
    ], ignore_index=True)
    st.dataframe(summary, use_container_width=True, hide_index=True)
