import json

import numpy as np
import pytest

from plcmac.config import (
    INFINITE,
    ConfigError,
    Preset,
    ProtocolConfig,
    TimingParams,
    Verdict,
    alpha_config,
    builtin_config,
    check_cond_numeric,
    check_window_rule,
    config_from_mapping,
    family_config,
    load_config,
    satisfies_cond,
)


def test_presets(ca1, ca3, counterexample):
    assert ca1.m == 4 and ca1.cw == (8, 16, 32, 64) and ca1.dc == (0, 1, 3, 15)
    assert ca3.cw == (8, 16, 16, 32) and ca3.dc == (0, 1, 3, 15)
    ce = counterexample
    assert ce.m == 60
    assert all(ce.stage(i) == (32, 3) for i in range(4))
    assert all(ce.stage(i) == (4, INFINITE) for i in range(4, 54))
    assert all(ce.stage(i) == (64, 3) for i in range(54, 60))


def test_presets_stable_across_calls():
    for p in Preset:
        assert builtin_config(p) == builtin_config(p.value)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        builtin_config("ca9")


@pytest.mark.parametrize(
    "cw, dc",
    [((), ()), ((8, 16), (0,)), ((1,), (0,)), ((8,), (-1,))],
)
def test_invalid_configs(cw, dc):
    with pytest.raises(ConfigError):
        ProtocolConfig(cw, dc)


def test_timing_defaults():
    t = TimingParams()
    assert t.t_success == pytest.approx(2 * 35.84 + 110.48 + 2500 + 140 + 110.48 + 100)
    assert t.t_collision == 2920.64
    with pytest.raises(ConfigError):
        TimingParams(eifs=0)


@pytest.mark.parametrize(
    "args, cw, dc",
    [
        ((8, 0, 2, 3), [8, 16, 32], [0, 1, 3]),
        ((8, 0, 1, 2), [8, 16], [0, 0]),
        ((16, 3, 2, 2), [16, 32], [3, 7]),
    ],
)
def test_family_config(args, cw, dc):
    c = family_config(*args)
    assert list(c.cw) == cw and list(c.dc) == dc


def test_family_overflow():
    with pytest.raises(OverflowError):
        family_config(8, 0, 2, 80)


@pytest.mark.parametrize(
    "alpha, m, cw, dc",
    [(1.0, 5, [8] * 5, [0] * 5), (2.0, 3, [8, 16, 32], [0, 1, 3]), (0.5, 2, [8, 4], [0, 0])],
)
def test_alpha_config(alpha, m, cw, dc):
    c = alpha_config(alpha, m)
    assert list(c.cw) == cw and list(c.dc) == dc


def test_alpha_too_small():
    with pytest.raises(ConfigError):
        alpha_config(0.5, 4)


def test_window_rule(ca1, ca3):
    v = check_window_rule(ca1)
    assert [x.verdict for x in v] == [Verdict.PASS] * 3
    assert [x.detail for x in v] == ["16 > 15", "32 > 30", "64 > 60"]
    assert [x.verdict for x in check_window_rule(ca3)] == [Verdict.PASS, Verdict.FAIL, Verdict.PASS]
    assert check_window_rule(ProtocolConfig((8, 16), (0, 0)))[0].passed


def test_window_rule_single_infinite_is_undecided():
    v = check_window_rule(ProtocolConfig((8, 16), (3, INFINITE)))
    assert v[0].verdict is Verdict.UNDECIDED
    assert check_window_rule(ProtocolConfig((8, 16), (INFINITE, INFINITE)))[0].passed


def test_cond_numeric(ca1, ca3):
    assert all(v.passed for v in check_cond_numeric(ca1))
    assert [v.passed for v in check_cond_numeric(ca3)] == [True, False, True]
    assert not check_cond_numeric(ProtocolConfig((8, 8), (0, 0)), grid=11)[0].passed
    assert satisfies_cond(ca1) and not satisfies_cond(ca3)


def test_window_rule_implies_numeric_cond():
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(300):
        cw = sorted(int(c) for c in rng.choice([8, 16, 32, 64], size=2))
        dc = [int(d) for d in rng.choice([0, 1, 2, 3, 5, 10, 15, 20, 30], size=2)]
        cfg = ProtocolConfig(tuple(cw), tuple(dc))
        if check_window_rule(cfg)[0].passed:
            checked += 1
            assert check_cond_numeric(cfg, grid=51)[0].passed, cfg
    assert checked > 20


def test_config_file_roundtrip(tmp_path, counterexample):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(counterexample.to_dict()))
    cfg, timing = load_config(path)
    assert cfg == counterexample and timing == TimingParams()
    y = tmp_path / "c.yaml"
    y.write_text("m: 2\ncw: [8, 16]\ndc: [0, inf]\ntiming:\n  frame_d: 1000\n")
    cfg, timing = load_config(y)
    assert cfg.dc == (0, INFINITE) and timing.frame_d == 1000.0


@pytest.mark.parametrize(
    "doc",
    [
        {"cw": [8]},
        {"cw": [8, 16], "dc": [0, "x"]},
        {"cw": [8.5], "dc": [0]},
        {"cw": [8], "dc": [0], "m": 2},
        {"cw": [8], "dc": [0], "timing": {"bogus": 1}},
        [1, 2],
    ],
)
def test_bad_config_documents(doc):
    with pytest.raises(ConfigError):
        config_from_mapping(doc)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
