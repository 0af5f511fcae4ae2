import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmfall.data.recordings import (ACC_COUNTS_PER_G, GYRO_COUNTS_PER_DPS, PreprocessConfig, RawRecording,
                                    SegmentationWarning, impute_linear, load_sisfall_dir,
                                    load_ucihar_windows, n_windows, normalize_units, parse_sisfall,
                                    parse_ucihar, preprocess, segment_windows, window_activity)
from mmfall.data.windows import ACTIVITY_INDEX, FALLING, PHYSIO_BASELINE
from mmfall.errors import AlignmentError, ImputationError, LabelingError, NormalizationError, ParseError


def write_trial(path, rows):
    path.write_text("".join(",".join(str(v) for v in r) + ";\n" for r in rows))
    return path


def rec(n, fall=False, code=None, acc=None):
    acc = np.tile([0.0, 0.0, 1.0], (n, 1)) if acc is None else acc
    return RawRecording("S1", code or ("F01" if fall else "D01"), fall, acc, np.zeros((n, 3)), 200.0,
                        normalized=True)


def test_parse_sisfall_adl(tmp_path):
    r = parse_sisfall(write_trial(tmp_path / "D01_SA01_R01.txt", [[1, 2, 3, 4, 5, 6, 7, 8, 9], [9, 8, 7, 6, 5, 4, 3, 2, 1]]))
    assert (r.subject_id, r.activity_code, r.is_fall_trial, r.n_samples) == ("SA01", "D01", False, 2)
    np.testing.assert_array_equal(r.acc[0], [1, 2, 3])
    np.testing.assert_array_equal(r.gyro[1], [6, 5, 4])
    assert r.sample_rate_hz == 200.0


def test_parse_sisfall_fall_and_errors(tmp_path):
    assert parse_sisfall(write_trial(tmp_path / "F05_SE06_R02.txt", [[0] * 6])).is_fall_trial
    bad = write_trial(tmp_path / "D01_SA01_R02.txt", [[0] * 6, [1, 2, 3, 4, 5]])
    with pytest.raises(ParseError, match="line 2") as ei:
        parse_sisfall(bad)
    assert ei.value.line == 2
    with pytest.raises(LabelingError):
        parse_sisfall(write_trial(tmp_path / "X01_SA01_R01.txt", [[0] * 6]))
    with pytest.raises(ParseError):
        parse_sisfall(write_trial(tmp_path / "nonsense.txt", [[0] * 6]))


def test_physio_sidecar(tmp_path):
    path = write_trial(tmp_path / "D01_SA01_R01.txt", [[0] * 6])
    side = tmp_path / "D01_SA01_R01.physio"
    side.write_text("80 96 34 3")
    np.testing.assert_array_equal(parse_sisfall(path, side).physio, [80, 96, 34, 3])


def _ucihar_fixture(tmp_path, n_rows=3, n_labels=3):
    sig = tmp_path / "signals"
    sig.mkdir()
    rng = np.random.default_rng(0)
    for stem in ("total_acc", "body_gyro"):
        for ax in "xyz":
            np.savetxt(sig / f"{stem}_{ax}_train.txt", rng.normal(size=(n_rows, 128)))
    (tmp_path / "y.txt").write_text("\n".join(["5", "1", "6", "4"][:n_labels]) + "\n")
    (tmp_path / "subj.txt").write_text("\n".join(["1", "1", "2", "2"][:n_rows]) + "\n")
    return sig, tmp_path / "y.txt", tmp_path / "subj.txt"


def test_parse_ucihar(tmp_path):
    recs = parse_ucihar(*_ucihar_fixture(tmp_path))
    assert len(recs) == 3 and all(r.n_samples == 128 and r.sample_rate_hz == 50.0 for r in recs)
    assert recs[0].activity == ACTIVITY_INDEX["stationary"]
    assert recs[2].activity == ACTIVITY_INDEX["lying"]
    assert recs[0].physio is None


def test_ucihar_misaligned(tmp_path):
    sig, y, s = _ucihar_fixture(tmp_path, n_rows=3, n_labels=4)
    with pytest.raises(AlignmentError):
        parse_ucihar(sig, y, s)


def test_ucihar_windows_resampled(tmp_path):
    ws = load_ucihar_windows(*_ucihar_fixture(tmp_path), T=100)
    assert len(ws) == 3 and all(w.T == 100 for w in ws)
    np.testing.assert_array_equal(ws[0].P, PHYSIO_BASELINE)


def test_unit_scaling():
    raw = RawRecording("S", "D01", False, [[ACC_COUNTS_PER_G, 0, 0]], [[GYRO_COUNTS_PER_DPS, 0, 0]], 200.0)
    out = normalize_units(raw)
    assert out.acc[0, 0] == 1.0 and out.gyro[0, 0] == 1.0
    with pytest.raises(NormalizationError):
        normalize_units(out)
    assert preprocess(out).acc[0, 0] == 1.0   # already normalised: not scaled again


def test_impute():
    np.testing.assert_array_equal(impute_linear(np.array([1.0, np.nan, 3.0])), [1, 2, 3])
    np.testing.assert_array_equal(impute_linear(np.array([np.nan, 2.0, np.nan])), [2, 2, 2])
    with pytest.raises(ImputationError):
        impute_linear(np.array([[np.nan], [np.nan]]))


def test_resample_to_target_rate():
    r = RawRecording("S", "D01", False, np.ones((101, 3)), np.zeros((101, 3)), 100.0, normalized=True)
    out = preprocess(r, PreprocessConfig(target_rate_hz=200.0))
    assert out.n_samples == 201 and out.sample_rate_hz == 200.0


def test_window_counts_examples():
    assert len(segment_windows(rec(200))) == 3
    assert [w.meta["offset"] for w in segment_windows(rec(200))] == [0, 50, 100]
    assert len(segment_windows(rec(100))) == 1
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert segment_windows(rec(99)) == []
    assert any(issubclass(c.category, SegmentationWarning) for c in caught)


@given(st.integers(100, 700), st.sampled_from([(100, 0.5), (50, 0.0), (40, 0.75)]))
def test_window_count_formula(n, cfg):
    T, overlap = cfg
    stride = int(round(T * (1 - overlap)))
    got = segment_windows(rec(n), T, overlap)
    assert len(got) == n_windows(n, T, stride) == (n - T) // stride + 1
    for w in got:
        w.validate(T)


def test_fall_trial_labelling():
    acc = np.tile([0.0, 0.0, 1.0], (400, 1))
    acc[250] = [0.0, 0.0, 5.0]
    ws = segment_windows(rec(400, fall=True, acc=acc))
    # windows overlapping samples 200..300 are positive
    assert [w.y_fall for w in ws] == [0, 0, 0, 1, 1, 1, 1]
    assert [w.y_act for w in ws][:3] == [ACTIVITY_INDEX["walking"]] * 3
    assert all(w.y_fall == 1 for w in ws if w.y_act == FALLING)


def test_majority_tie_goes_to_falling():
    assert window_activity(np.array([1] * 50 + [3] * 50)) == FALLING
    assert window_activity(np.array([1] * 50 + [4] * 50)) == 1
    assert window_activity(np.array([2] * 60 + [3] * 40)) == 2


def test_unknown_adl_code():
    with pytest.raises(LabelingError):
        segment_windows(rec(100, code="D99"))


def test_load_sisfall_dir(tmp_path):
    rows = [[0, 0, 16384, 0, 0, 0]] * 250
    write_trial(tmp_path / "D15_SA02_R01.txt", rows)
    write_trial(tmp_path / "notes.txt", [[1]])
    ws = load_sisfall_dir(tmp_path)
    assert len(ws) == 4 and all(w.subject_id == "SA02" and w.y_act == 0 for w in ws)
    np.testing.assert_array_equal(ws[0].A[0], [0, 0, 1])
