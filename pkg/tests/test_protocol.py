import json
import math
from dataclasses import replace

import numpy as np
import pytest

from utils import protocol
from utils.config import TrainingSettings
from utils.errors import InputError
from utils.model import Codec
from utils.model_store import model_to_bytes
from utils.netspec import instantiate, parse_spec
from utils.protocol import (
    EarlyStopState,
    Stage,
    TrainPlan,
    adapt_codec,
    build_mixed_models,
    early_stop_update,
    eval_interval,
    finetune,
    group_pages,
    pretrain_printed,
    select_balanced_pages,
    split_validation,
    train_from_scratch,
    train_model,
    train_stages,
)

from conftest import TINY_HEIGHT, TINY_SPEC


def run_trace(values, epochs=None, **kwargs):
    state = EarlyStopState(**kwargs)
    trace = []
    for index, value in enumerate(values):
        state = replace(state, epoch=epochs[index] if epochs else 1)
        state = early_stop_update(state, value)
        trace.append(state)
        if state.stopped:
            break
    return trace


def test_stops_at_fifth_non_improvement():
    trace = run_trace([5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 3.0])
    assert len(trace) == 7
    assert trace[-1].best_cer == 4.0
    assert [s.evals_since_best for s in trace] == [0, 0, 1, 2, 3, 4, 5]


def test_equal_value_is_not_an_improvement():
    trace = run_trace([3.0, 3.0])
    assert not trace[1].improved
    assert trace[1].evals_since_best == 1


def test_improvement_resets_counter():
    trace = run_trace([5.0, 6.0, 6.0, 6.0, 4.0, 6.0])
    assert [s.evals_since_best for s in trace] == [0, 1, 2, 3, 0, 1]
    assert not any(s.stopped for s in trace)


def test_decreasing_series_runs_to_epoch_cap():
    values = [100.0 - e for e in range(1, 120)]
    trace = run_trace(values, epochs=list(range(1, 120)))
    assert len(trace) == 100
    assert trace[-1].epoch == 100 and trace[-1].stopped


def test_exhaustive_short_traces_never_exceed_patience():
    rng = np.random.default_rng(0)
    for _ in range(500):
        values = list(rng.integers(0, 4, size=30).astype(float))
        trace = run_trace(values)
        assert all(0 <= s.evals_since_best <= 5 for s in trace)
        if trace[-1].stopped:
            assert trace[-1].evals_since_best == 5
            assert all(s.evals_since_best < 5 for s in trace[:-1])


def test_negative_cer_rejected():
    with pytest.raises(InputError):
        early_stop_update(EarlyStopState(), -1.0)


def test_eval_interval():
    settings = TrainingSettings()
    assert eval_interval(20, settings) == 1000
    assert eval_interval(6000, settings) == 6000


@pytest.fixture
def scripted_cer(monkeypatch):
    """Replace validation with a scripted CER sequence"""
    def install(values):
        remaining = iter(values)
        monkeypatch.setattr(protocol, "validation_cer", lambda params, samples: next(remaining))
    return install


@pytest.fixture
def one_eval_per_epoch():
    return TrainingSettings(batch_size=2, augment=0, min_eval_samples=1, input_height=TINY_HEIGHT)


def test_train_model_returns_best_snapshot(tmp_path, tiny_model, make_samples, scripted_cer, one_eval_per_epoch):
    scripted_cer([5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0])
    train = make_samples(["ab", "ca"])
    val = make_samples(["bc"], manuscript="val")
    log_path = tmp_path / "logs" / "run.jsonl"
    best, history = train_model(tiny_model, train, val, np.random.default_rng(0), one_eval_per_epoch, log_path)
    assert len(history) == 7
    assert history[-1]["stopped"] and not any(r["stopped"] for r in history[:-1])
    assert best.train_meta.samples_seen == 4
    assert [r["samples_seen"] for r in history] == [2, 4, 6, 8, 10, 12, 14]
    records = [json.loads(line) for line in log_path.read_text(encoding="utf-8").splitlines()]
    assert records == history
    assert set(records[0]) == {"epoch", "samples_seen", "val_cer", "best", "stopped"}


def test_train_model_caps_epochs(tiny_model, make_samples, scripted_cer, one_eval_per_epoch):
    scripted_cer([10.0 - i for i in range(10)])
    settings = replace(one_eval_per_epoch, max_epochs=3)
    best, history = train_model(tiny_model, make_samples(["ab", "ca"]), make_samples(["bc"], "val"),
                                np.random.default_rng(0), settings)
    assert [r["epoch"] for r in history] == [1, 2, 3]
    assert history[-1]["stopped"]
    assert best.train_meta.samples_seen == 6


def test_train_model_step_cap(tiny_model, make_samples, scripted_cer, one_eval_per_epoch):
    scripted_cer([7.0])
    settings = replace(one_eval_per_epoch, max_steps=1)
    _, history = train_model(tiny_model, make_samples(["ab", "ca", "bb", "ac"]), make_samples(["bc"], "val"),
                             np.random.default_rng(0), settings)
    assert len(history) == 1 and history[0]["stopped"]


def test_train_model_trains_on_preprocessing_variants(tiny_model, make_samples, make_line, scripted_cer,
                                                     one_eval_per_epoch):
    scripted_cer([5.0])
    train = [replace(s, variants=(make_line(24, s.image.source_id, seed=50),)) for s in make_samples(["ab", "ca"])]
    settings = replace(one_eval_per_epoch, max_epochs=1)
    _, history = train_model(tiny_model, train, make_samples(["bc"], "val"), np.random.default_rng(0), settings)
    assert [r["samples_seen"] for r in history] == [4]


def test_train_model_needs_data(tiny_model, make_samples):
    with pytest.raises(InputError):
        train_model(tiny_model, [], make_samples(["a"]), np.random.default_rng(0))


@pytest.mark.parametrize(
    "counts, expected",
    [([60, 60, 60], 3), ([40, 30, 30], 3), ([200, 200, 200], 1)],
)
def test_selection_examples(counts, expected):
    assert len(select_balanced_pages(counts, 150, np.random.default_rng(0))) == expected


def test_selection_stops_right_after_a_large_first_page():
    seen = 0
    for seed in range(30):
        chosen = select_balanced_pages([200, 5, 5], 150, np.random.default_rng(seed))
        if chosen[0] == 200:
            assert chosen == [200]
            seen += 1
    assert seen > 0


def test_selection_is_a_permutation_prefix():
    pages = [f"page{i}" for i in range(12)]
    counts = {page: 10 + i for i, page in enumerate(pages)}
    chosen = select_balanced_pages(pages, 60, np.random.default_rng(9), line_count=counts.get)
    order = [pages[i] for i in np.random.default_rng(9).permutation(len(pages))]
    assert chosen == order[:len(chosen)]


def test_selection_rule_on_random_manuscripts():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        counts = [int(c) for c in rng.integers(1, 60, size=int(rng.integers(1, 30)))]
        chosen = select_balanced_pages(counts, 150, rng)
        total = sum(chosen)
        assert total >= 150 or len(chosen) == len(counts)
        assert sum(chosen[:-1]) < 150


def test_selection_bound_for_unbalanced_manuscripts():
    rng = np.random.default_rng(2)
    large = [25] * 40
    small = [25] * 6
    for counts in (large, small):
        total = sum(select_balanced_pages(counts, 150, rng))
        assert 150 <= total <= 150 + 25


def test_cutoff_must_be_positive():
    with pytest.raises(InputError):
        select_balanced_pages([10], 0, np.random.default_rng(0))


def test_split_validation(make_samples):
    samples = make_samples([f"a{i}" for i in range(10)])
    train, val = split_validation(samples, 0.1, np.random.default_rng(0))
    assert len(train) == 9 and len(val) == 1
    assert {s.line_id for s in train} | {s.line_id for s in val} == {s.line_id for s in samples}
    single = make_samples(["ab"])
    assert split_validation(single, 0.1, np.random.default_rng(0)) == (single, single)


def test_train_plan_rejects_overlap(make_samples):
    samples = make_samples(["ab", "bc"])
    with pytest.raises(InputError):
        TrainPlan(Stage.ALL_PAGES, samples, samples[:1], parse_spec(TINY_SPEC))
    TrainPlan(Stage.ALL_PAGES, samples, samples, parse_spec(TINY_SPEC))


def test_group_pages(make_samples):
    grouped = group_pages(make_samples(["a", "b", "c", "d"], pages=2))
    assert list(grouped["ms"]) == ["p0", "p1"]
    assert [s.text for s in grouped["ms"]["p1"]] == ["b", "d"]


def test_adapt_codec_appends_rows():
    base = instantiate(parse_spec(TINY_SPEC), TINY_HEIGHT, Codec(tuple("abcdefghij")), np.random.default_rng(0))
    adapted = adapt_codec(base, ["abk", "lj"], np.random.default_rng(1))
    assert adapted.codec.chars == tuple("abcdefghijkl")
    assert base.tensors["proj.weight"].shape == (11, 8)
    assert adapted.tensors["proj.weight"].shape == (13, 8)
    assert adapted.ema_tensors["proj.bias"].shape == (13,)
    np.testing.assert_array_equal(adapted.tensors["proj.weight"][:11], base.tensors["proj.weight"])
    np.testing.assert_array_equal(adapted.ema_tensors["proj.weight"][:11], base.ema_tensors["proj.weight"])
    np.testing.assert_array_equal(adapted.tensors["lstm0.fw.W"], base.tensors["lstm0.fw.W"])


def test_adapt_codec_no_op_for_known_alphabet(tiny_model):
    assert adapt_codec(tiny_model, ["cab"], np.random.default_rng(0)) is tiny_model


def test_finetune_keeps_base_and_grows_codec(tiny_model, make_samples, tiny_settings):
    snapshot = model_to_bytes(tiny_model)
    gt = make_samples(["abd", "dab", "bad", "cad", "dd"])
    tuned = finetune(tiny_model, gt, np.random.default_rng(0), tiny_settings)
    assert tuned.codec.chars == ("a", "b", "c", "d")
    assert tuned.tensors["proj.weight"].shape == (5, 8)
    assert model_to_bytes(tiny_model) == snapshot
    assert tuned.train_meta.samples_seen > 0


def test_finetune_requires_gt(tiny_model):
    with pytest.raises(InputError):
        finetune(tiny_model, [], np.random.default_rng(0))


def test_train_from_scratch_builds_codec(make_samples, tiny_settings):
    model = train_from_scratch(TINY_SPEC, make_samples(["ab", "ba", "ca", "ac"]), np.random.default_rng(0), tiny_settings)
    assert model.codec.chars == ("a", "b", "c")
    assert model.input_height == TINY_HEIGHT


def test_train_stages_small_corpus_selects_every_page(tmp_path, make_samples, tiny_settings):
    samples = make_samples(["ab", "ba", "ca", "ac", "bc", "cb"], manuscript="m1", pages=2)
    samples += make_samples(["aa", "bb", "cc", "abc"], manuscript="m2", pages=2)
    result = train_stages(samples, TINY_SPEC, np.random.default_rng(0), settings=tiny_settings, log_dir=tmp_path,
                          name="mixed")
    assert {ms: sorted(pages) for ms, pages in result.selected_pages.items()} == {"m1": ["p0", "p1"], "m2": ["p0", "p1"]}
    assert math.isfinite(result.stage1_val_cer) and math.isfinite(result.stage2_val_cer)
    assert (tmp_path / "mixed.stage1.jsonl").exists() and (tmp_path / "mixed.stage2.jsonl").exists()
    assert result.stage2.codec == result.stage1.codec


def test_train_stages_needs_transcribed_lines(make_samples):
    with pytest.raises(InputError):
        train_stages(make_samples(["", ""]), TINY_SPEC, np.random.default_rng(0))


def test_build_mixed_models(make_samples, tiny_settings):
    by_style = {
        "A": make_samples(["ab", "ba", "aab"], manuscript="A00"),
        "B": make_samples(["cb", "bc", "ccb"], manuscript="B00"),
    }
    models = build_mixed_models(by_style, TINY_SPEC, np.random.default_rng(0), settings=tiny_settings)
    assert set(models) == {"combined", "A", "B"}
    assert models["combined"].codec.chars == ("a", "b", "c")
    assert models["A"].codec.chars[:3] == ("a", "b", "c")


def test_pretrain_printed(tiny_settings):
    settings = replace(tiny_settings, input_height=16)
    model = pretrain_printed(TINY_SPEC, np.random.default_rng(0), settings, n_lines=6, alphabet_size=3)
    assert model.input_height == 16
    assert set(model.codec.chars) <= set("abc .")
