import streamlit as st
from dataclasses import replace
from utils.config import SynthSettings, configure_logging
from utils.data_manager import load_page_dir, validate_results
from utils.pagexml import corpus_stats
from utils.recognizer import Prediction
from utils.report_generator import get_report_download_button
from utils.synth_data import synth_corpus
from pages import corpus_overview, training_monitor, ita_results, error_analysis

configure_logging()

# Set page config
st.set_page_config(
    page_title="Scriptine",
    page_icon="📜",
    layout="wide",
    initial_sidebar_state="expanded"
)

# Hide default menu elements and add custom styling
st.markdown("""
<style>
/* Hide sidebar navigation menu (tabs replace the multipage menu) */
[data-testid="stSidebarNav"] {
    display: none !important;
}

#MainMenu {
    visibility: hidden;
}

footer {
    visibility: hidden;
}

[data-testid="stMetric"] {
    background-color: #1E1E1E;
    border-radius: 8px;
    padding: 12px 15px;
}

[data-testid="stMetricLabel"] {
    font-weight: 600 !important;
}

section[data-testid="stSidebar"] {
    background-color: #181818;
    border-right: 1px solid #2D2D2D;
}
</style>
""", unsafe_allow_html=True)

DEMO_SEED = 7

def demo_corpus_stats():
    """Corpus statistics of a small synthetic two-style corpus"""
    settings = replace(SynthSettings(), n_manuscripts=2, pages_per_ms=4)
    corpus, rasters = synth_corpus(settings, "A", DEMO_SEED)
    synth_corpus(settings, "B", DEMO_SEED, corpus=corpus, rasters=rasters)
    return corpus_stats(corpus)

# Initialize session state
if "corpus_stats" not in st.session_state:
    st.session_state.corpus_stats = demo_corpus_stats()
if "training_logs" not in st.session_state:
    st.session_state.training_logs = {}
if "ita_frame" not in st.session_state:
    st.session_state.ita_frame = None
if "confusion_frames" not in st.session_state:
    st.session_state.confusion_frames = {}
if "predictions" not in st.session_state:
    st.session_state.predictions = []

st.sidebar.markdown("""
<h1 style='text-align: center'>
    <span style='color: #e65100'>
        Scriptine
    </span>
</h1>
""", unsafe_allow_html=True)

st.sidebar.markdown("---")

# Data Management Section in Sidebar
with st.sidebar.expander("📊 Data Management"):
    result_type = st.selectbox(
        "Select Result Type for Upload:",
        ["ITA Result Table", "Confusion Table", "Training Log", "Predictions"]
    )

    kind_map = {
        "ITA Result Table": ("ita", ["tsv", "txt"]),
        "Confusion Table": ("confusion", ["tsv", "txt"]),
        "Training Log": ("log", ["jsonl", "json"]),
        "Predictions": ("predictions", ["jsonl", "json"])
    }
    kind, extensions = kind_map[result_type]

    uploaded_file = st.file_uploader(
        f"Upload {result_type}:",
        type=extensions
    )

    if uploaded_file is not None:
        is_valid, message, data = validate_results(uploaded_file, kind)

        if is_valid:
            label = uploaded_file.name.rsplit(".", 1)[0]
            if kind == "ita":
                st.session_state.ita_frame = data
            elif kind == "confusion":
                st.session_state.confusion_frames[label] = data
            elif kind == "log":
                st.session_state.training_logs[label] = data
            else:
                st.session_state.predictions = [
                    Prediction.from_record(record) for record in data.to_dict(orient="records")
                ]
            st.success(f"✅ {result_type} loaded successfully!")
        else:
            st.error(f"❌ {message}")

    page_dir = st.text_input("PAGE corpus directory:")
    if page_dir and st.button("Load Corpus"):
        try:
            corpus, _ = load_page_dir(page_dir)
            st.session_state.corpus_stats = corpus_stats(corpus)
            st.success("✅ Corpus loaded")
        except ValueError as e:
            st.error(f"❌ {e}")

    if st.button("Reset to Demo Data"):
        st.session_state.corpus_stats = demo_corpus_stats()
        st.session_state.training_logs = {}
        st.session_state.ita_frame = None
        st.session_state.confusion_frames = {}
        st.session_state.predictions = []
        st.success("✅ Reset to demonstration data")
        st.rerun()

# Report Section in Sidebar
with st.sidebar.expander("📑 Download Report"):
    if st.session_state.ita_frame is None and not st.session_state.confusion_frames:
        st.info("Load an ITA table or confusion tables to build a report.")
    else:
        get_report_download_button(st.session_state.ita_frame, st.session_state.confusion_frames)

# Main content area with tabs
tab1, tab2, tab3, tab4, tab5 = st.tabs([
    "Welcome",
    "Corpus Overview",
    "Training Monitor",
    "ITA Results",
    "Error Analysis"
])

with tab1:
    st.title("Welcome to Scriptine")
    st.markdown("""
    ## From a Mixed Model to a Document-Specific Recognizer

    Scriptine trains line recognizers for historical handwriting in two steps: a **mixed model** learned on many
    manuscripts of one script style, then **finetuning** on a few transcribed pages of the manuscript at hand.
    This browser shows the artifacts the `scriptine` command line writes.

    ### Getting Started
    1. Run `scriptine ita --seed 7 --sizes 2,4 --output runs/ita` (or the individual `train`, `finetune`, `recognize` and `evaluate` commands)
    2. Upload `ita.tsv`, the `confusions.*.tsv` files and the JSON-lines training logs in the sidebar
    3. Browse the tabs: corpus statistics, training curves, from-scratch vs pretrained CERs and error analysis
    """)

    stats = st.session_state.corpus_stats
    metric_col1, metric_col2, metric_col3, metric_col4 = st.columns(4)
    with metric_col1:
        st.metric("Manuscripts", f"{len(stats)}")
    with metric_col2:
        st.metric("Pages", f"{int(stats['pages'].sum())}" if len(stats) else "0")
    with metric_col3:
        st.metric("Training Runs", f"{len(st.session_state.training_logs)}")
    with metric_col4:
        st.metric("Confusion Tables", f"{len(st.session_state.confusion_frames)}")

with tab2:
    corpus_overview.show(st.session_state)

with tab3:
    training_monitor.show(st.session_state)

with tab4:
    ita_results.show(st.session_state)

with tab5:
    error_analysis.show(st.session_state)
