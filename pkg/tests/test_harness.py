import numpy as np
import pytest

from utils.errors import InputError
from utils.harness import (
    ItaResultTable,
    ItaRow,
    average_ita_tables,
    make_nested_splits,
    run_ita,
    samples_by_page,
)
from utils.model_store import model_to_bytes

from conftest import TINY_SPEC


def test_nested_split_properties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pages = [f"p{i:02d}" for i in range(int(rng.integers(9, 40)))]
        splits = make_nested_splits(pages, (2, 4, 8), rng)
        assert set(splits.train_sets) == {2, 4, 8}
        for size, chosen in splits.train_sets.items():
            assert len(chosen) == size == len(set(chosen))
            assert list(chosen) == sorted(chosen)
        assert set(splits.train_sets[2]) <= set(splits.train_sets[4]) <= set(splits.train_sets[8])
        assert not set(splits.eval_pages) & set(splits.train_sets[8])
        assert len(splits.eval_pages) + 8 == len(pages)
        assert list(splits.eval_pages) == sorted(splits.eval_pages)


def test_forty_pages_leave_eight_for_evaluation():
    pages = list(range(40))
    splits = make_nested_splits(pages, (2, 4, 8, 16, 32), np.random.default_rng(3))
    assert len(splits.eval_pages) == 8


def test_splits_need_an_evaluation_remainder():
    with pytest.raises(InputError):
        make_nested_splits(range(8), (2, 4, 8), np.random.default_rng(0))
    with pytest.raises(InputError):
        make_nested_splits(range(8), (0, 2), np.random.default_rng(0))


def test_splits_are_seeded():
    first = make_nested_splits(range(20), (2, 4), np.random.default_rng(5))
    second = make_nested_splits(range(20), (2, 4), np.random.default_rng(5))
    assert first == second


@pytest.fixture
def published_table():
    table = ItaResultTable("W", out_of_box=6.21)
    table.rows.append(ItaRow(2, 13.67, 1.95, 86, 69))
    table.rows.append(ItaRow(4, 5.27, 1.59, 70, 18))
    return table


def test_table_tsv_layout(published_table):
    lines = published_table.to_tsv().splitlines()
    assert lines[0] == "manuscript\tpages\tfs_cer\tpt_cer\timpr_fs\timpr_prev"
    assert lines[1] == "W\t0\t-\t6.21\t-\t-"
    assert lines[2] == "W\t2\t13.67\t1.95\t86\t69"
    assert lines[3] == "W\t4\t5.27\t1.59\t70\t18"


def test_table_without_base_has_no_row_zero():
    table = ItaResultTable("W")
    table.rows.append(ItaRow(2, 40.0, None))
    assert table.to_tsv().splitlines()[1:] == ["W\t2\t40.00\t-\t-\t-"]


def test_average_recomputes_rates(published_table):
    other = ItaResultTable("B", out_of_box=4.90)
    other.rows.append(ItaRow(2, 10.73, 2.61, 76, 47))
    other.rows.append(ItaRow(4, 7.68, 2.30, 70, 12))
    averaged = average_ita_tables([published_table, other], label="Avg.")
    assert averaged.out_of_box == pytest.approx(5.555)
    first = averaged.rows[0]
    assert first.fs_cer == pytest.approx(12.20)
    assert first.pt_cer == pytest.approx(2.28)
    assert (first.impr_fs, first.impr_prev) == (81, 59)
    assert averaged.to_frame()["manuscript"].unique().tolist() == ["Avg."]
    with pytest.raises(InputError):
        average_ita_tables([])


@pytest.fixture
def manuscript_pages(make_samples):
    texts = ["ab", "ba", "cab", "abc", "bca", "ca", "ac", "cb"]
    return samples_by_page(make_samples(texts, manuscript="W", pages=4))


def test_samples_by_page(manuscript_pages):
    assert sorted(manuscript_pages) == ["p0", "p1", "p2", "p3"]
    assert [s.text for s in manuscript_pages["p1"]] == ["ba", "ca"]


def test_run_ita_small_manuscript(tmp_path, tiny_model, tiny_settings, manuscript_pages):
    snapshot = model_to_bytes(tiny_model)
    splits = make_nested_splits(sorted(manuscript_pages), (1, 2), np.random.default_rng(0))
    result = run_ita("W", manuscript_pages, tiny_model, splits, 7, TINY_SPEC, tiny_settings, log_dir=tmp_path)
    frame = result.table.to_frame()
    assert frame["pages"].tolist() == [0, 1, 2]
    assert set(result.confusions) == {"oob", "pt1", "pt2"}
    assert model_to_bytes(tiny_model) == snapshot
    assert (tmp_path / "W.pt1.jsonl").exists() and (tmp_path / "W.fs2.jsonl").exists()

    again = run_ita("W", manuscript_pages, tiny_model, splits, 7, TINY_SPEC, tiny_settings)
    assert again.table.to_tsv() == result.table.to_tsv()


def test_run_ita_from_scratch_only(tiny_settings, manuscript_pages):
    splits = make_nested_splits(sorted(manuscript_pages), (1,), np.random.default_rng(0))
    result = run_ita("W", manuscript_pages, None, splits, 7, TINY_SPEC, tiny_settings)
    assert result.table.out_of_box is None
    assert [row.pt_cer for row in result.table.rows] == [None]
    assert result.confusions == {}


def test_run_ita_requires_ground_truth(tiny_model, tiny_settings, manuscript_pages):
    splits = make_nested_splits(sorted(manuscript_pages), (1,), np.random.default_rng(0))
    incomplete = dict(manuscript_pages)
    del incomplete[splits.eval_pages[0]]
    with pytest.raises(InputError, match="missing ground truth"):
        run_ita("W", incomplete, tiny_model, splits, 7, TINY_SPEC, tiny_settings)
