import pandas as pd

from utils.evaluation import confusion_table
from utils.harness import ItaResultTable, ItaRow
from utils.report_generator import create_report_workbook, create_summary_sheet


def ita_frame():
    table = ItaResultTable("W", out_of_box=6.21)
    table.rows.append(ItaRow(2, 13.67, 1.95, 86, 69))
    table.rows.append(ItaRow(4, 5.27, 1.59, 70, 18))
    return table.to_frame()


def test_summary_of_an_ita_table():
    summary = dict(create_summary_sheet(ita_frame()).values.tolist())
    assert summary["Manuscripts"] == "W"
    assert summary["Training sizes (pages)"] == "2, 4"
    assert summary["Mean FS CER (%)"] == "9.47"
    assert summary["Mean PT CER (%)"] == "1.77"
    assert summary["Out-of-the-box CER (%)"] == "6.21"


def test_summary_without_results():
    assert create_summary_sheet(pd.DataFrame()).values.tolist() == [["Status", "No ITA results loaded"]]
    assert create_summary_sheet(None).shape == (1, 2)


def test_workbook_sheets():
    confusions = confusion_table([("ab.", "ab"), ("vinum", "vmum")]).to_frame()
    workbook = create_report_workbook(ita_frame(), {"pt2": confusions, "a" * 40: confusions})
    sheets = pd.read_excel(workbook, sheet_name=None, engine="openpyxl")
    assert list(sheets) == ["Summary", "ITA_Results", "Confusions_pt2", ("Confusions_" + "a" * 40)[:31]]
    assert sheets["ITA_Results"]["pages"].tolist() == [0, 2, 4]
    assert sheets["Confusions_pt2"]["count"].tolist() == [1, 1]


def test_workbook_without_ita_results():
    sheets = pd.read_excel(create_report_workbook(pd.DataFrame(), {}), sheet_name=None, engine="openpyxl")
    assert list(sheets) == ["Summary"]
