import pandas as pd
import streamlit as st
from io import BytesIO
import base64

from utils.evaluation import round_half_up

def get_report_download_button(ita_frame, confusion_frames):
    """
    Create and display a download link for the Excel experiment report

    Parameters:
    ita_frame: ITA result table as a DataFrame
    confusion_frames: dict stage label -> confusion DataFrame (GT, PRED, CNT, %)
    """
    report_file = create_report_workbook(ita_frame, confusion_frames)

    mime_type = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"
    file_name = "scriptine_report.xlsx"

    b64 = base64.b64encode(report_file.getvalue()).decode()
    href = f'<a href="data:{mime_type};base64,{b64}" download="{file_name}">Download Excel Report</a>'

    st.sidebar.markdown(href, unsafe_allow_html=True)
    st.sidebar.info("👆 Click above to download the report")

def create_report_workbook(ita_frame, confusion_frames):
    """
    Create an Excel workbook with the ITA table and one sheet per confusion table

    Parameters:
    ita_frame: ITA result table as a DataFrame (may be empty)
    confusion_frames: dict stage label -> confusion DataFrame

    Returns:
    BytesIO: An in-memory Excel file
    """
    output = BytesIO()

    with pd.ExcelWriter(output, engine='openpyxl') as writer:
        create_summary_sheet(ita_frame).to_excel(writer, sheet_name='Summary', index=False)

        if ita_frame is not None and len(ita_frame) > 0:
            ita_frame.to_excel(writer, sheet_name='ITA_Results', index=False)

        for label, frame in confusion_frames.items():
            # Excel limits sheet names to 31 characters
            sheet_name = f"Confusions_{label}"[:31]
            frame.to_excel(writer, sheet_name=sheet_name, index=False)

    output.seek(0)
    return output

def create_summary_sheet(ita_frame):
    """
    Create the summary rows of the report

    Parameters:
    ita_frame: ITA result table as a DataFrame

    Returns:
    pd.DataFrame: Metric / value pairs
    """
    if ita_frame is None or len(ita_frame) == 0:
        return pd.DataFrame([["Status", "No ITA results loaded"]], columns=["Metric", "Value"])

    numeric = ita_frame.copy()
    for column in ['fs_cer', 'pt_cer', 'pages']:
        numeric[column] = pd.to_numeric(numeric[column], errors='coerce')

    trained = numeric[numeric['pages'] > 0]
    rows = [
        ["Manuscripts", ", ".join(sorted(numeric['manuscript'].astype(str).unique()))],
        ["Training sizes (pages)", ", ".join(str(int(p)) for p in sorted(trained['pages'].unique()))],
    ]
    if trained['fs_cer'].notna().any():
        rows.append(["Mean FS CER (%)", f"{round_half_up(trained['fs_cer'].mean(), 2):.2f}"])
    if trained['pt_cer'].notna().any():
        rows.append(["Mean PT CER (%)", f"{round_half_up(trained['pt_cer'].mean(), 2):.2f}"])
    out_of_box = numeric[numeric['pages'] == 0]['pt_cer']
    if out_of_box.notna().any():
        rows.append(["Out-of-the-box CER (%)", f"{round_half_up(out_of_box.mean(), 2):.2f}"])

    return pd.DataFrame(rows, columns=["Metric", "Value"])
