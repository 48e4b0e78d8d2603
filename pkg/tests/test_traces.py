import copy
import itertools
import json

import numpy as np
import pytest

from edgecrl.configspace import Configuration
from edgecrl.errors import ParameterError, SchemaVersionError, TraceFormatError
from edgecrl.traces import (BandwidthTrace, GeneratorParams, N_FIXED_LATENTS, dumps_trace, generate_trace,
                            load_bandwidth, load_trace, save_bandwidth, save_trace, validate_trace)


def test_deterministic_generation():
    p = GeneratorParams(n_segments=20, noise=0.03, crossover_prob=0.2)
    assert dumps_trace(generate_trace(p, 5)) == dumps_trace(generate_trace(p, 5))
    assert dumps_trace(generate_trace(p, 5)) != dumps_trace(generate_trace(p, 6))


def test_generated_trace_is_valid(small_trace):
    assert validate_trace(small_trace) == []
    for seg in small_trace:
        assert seg.accuracy[0, 0, 0] == 1.0
        assert seg.bitrate.shape == (3, 6) and seg.accuracy.shape == (5, 3, 6)


def test_noiseless_accuracy_strictly_monotone(space):
    t = generate_trace(GeneratorParams(n_segments=25, noise=0.0, crossover_prob=0.0), 3)
    for seg in t:
        for a, b in itertools.product(space.configs, repeat=2):
            if a == b:
                continue
            better = (a.resolution_scale >= b.resolution_scale and a.qp <= b.qp
                      and a.model_version <= b.model_version)
            if better:
                assert seg.accuracy_of(space, a) > seg.accuracy_of(space, b)


def test_qp_decay_recovered_by_regression(space):
    p = GeneratorParams(n_segments=10, qp_decay=0.137, qp_decay_jitter=0.0)
    t = generate_trace(p, 11)
    qps = np.array(space.qps, dtype=float)
    for seg in t:
        for row in np.log(seg.bitrate):
            slope = np.polyfit(qps, row, 1)[0]
            assert abs(-slope - 0.137) <= 1e-9
    # with jitter the per-segment decay lives in the latents
    t = generate_trace(GeneratorParams(n_segments=10), 11)
    for seg in t:
        slope = np.polyfit(qps, np.log(seg.bitrate[1]), 1)[0]
        assert abs(-slope - seg.scene_latents[2]) <= 1e-9


def test_crossovers_appear():
    t = generate_trace(GeneratorParams(n_segments=200, crossover_prob=0.5), 2)
    swapped = sum(bool(np.any(seg.accuracy[2] > seg.accuracy[1]) or np.any(seg.accuracy[3] > seg.accuracy[2])
                       or np.any(seg.accuracy[4] > seg.accuracy[3])) for seg in t)
    assert 50 < swapped < 150


@pytest.mark.parametrize("kw", [{"n_segments": 0}, {"n_segments": -3}, {"noise": -0.1},
                                {"crossover_prob": 1.5}])
def test_bad_params(kw):
    with pytest.raises(ParameterError):
        GeneratorParams(**kw)


def test_class_ious_average_to_miou(small_trace):
    seg = small_trace[0]
    assert seg.class_sensitivity().shape == (small_trace.n_classes,)
    assert len(seg.scene_latents) == N_FIXED_LATENTS + small_trace.n_classes
    assert seg.class_ious(0.9).mean() == pytest.approx(0.9)
    assert np.all(seg.class_ious(1.0) == 1.0)


def test_planted_qp_defect_flagged(small_trace):
    t = copy.deepcopy(small_trace)
    seg = t[4]
    seg.bitrate[1, 0] = seg.bitrate[1, 5] * 0.5  # qp 20 smaller than qp 30
    report = validate_trace(t)
    kinds = {(v.segment_id, v.kind) for v in report}
    assert (4, "bitrate_qp_monotonicity") in kinds
    assert all(v.segment_id == 4 for v in report)


def test_planted_accuracy_defect_flagged(small_trace):
    t = copy.deepcopy(small_trace)
    t[2].accuracy[3, 1, 1] = 1.2
    report = validate_trace(t)
    assert len(report) == 1
    assert report[0].kind == "accuracy_range" and report[0].segment_id == 2
    assert report[0].config == str(Configuration(0.75, 22, 3))


def test_round_trip(tmp_path, small_trace):
    path = tmp_path / "t.json"
    save_trace(small_trace, path)
    loaded = load_trace(path)
    assert loaded == small_trace
    for a, b in zip(loaded, small_trace):
        assert a.bitrate.tobytes() == b.bitrate.tobytes()
        assert a.accuracy.tobytes() == b.accuracy.tobytes()
    assert dumps_trace(loaded) == dumps_trace(small_trace)


def test_truncated_file(tmp_path, small_trace):
    path = tmp_path / "t.json"
    text = dumps_trace(small_trace)
    path.write_text(text[: len(text) // 2])
    with pytest.raises(TraceFormatError):
        load_trace(path)


def test_schema_version_mismatch(tmp_path, small_trace):
    path = tmp_path / "t.json"
    d = json.loads(dumps_trace(small_trace))
    d["schema_version"] = 99
    path.write_text(json.dumps(d))
    with pytest.raises(SchemaVersionError) as info:
        load_trace(path)
    assert "99" in str(info.value) and "1" in str(info.value)


def test_invalid_trace_rejected_on_load(tmp_path, small_trace):
    t = copy.deepcopy(small_trace)
    t[0].accuracy[1, 1, 1] = -0.5
    path = tmp_path / "t.json"
    save_trace(t, path)
    with pytest.raises(TraceFormatError):
        load_trace(path)


def test_example_trace_file_loads():
    from pathlib import Path
    example = Path(__file__).resolve().parents[1] / "docs" / "example_trace.json"
    t = load_trace(example)
    assert len(t) == 3 and validate_trace(t) == []


def test_bandwidth_traces(tmp_path):
    b = BandwidthTrace.piecewise([0.4, 0.8], [2, 3])
    assert b.values == (0.4, 0.4, 0.8, 0.8, 0.8)
    assert b.at(10) == 0.8
    assert BandwidthTrace.constant(0.6, 3).values == (0.6, 0.6, 0.6)
    save_bandwidth(b, tmp_path / "b.json")
    assert load_bandwidth(tmp_path / "b.json") == b
    with pytest.raises(ParameterError):
        BandwidthTrace((0.5, 0.0))
