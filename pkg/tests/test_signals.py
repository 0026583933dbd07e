import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from shmgan.signals import (DAMAGED, UNDAMAGED, AllocationError, DegenerateRangeError, IngestionError,
                            Mode, RawSignal, Segment, SurrogateSpec, build_scenario, denormalize,
                            load_pool, load_signal, normalize_minmax, save_pool, save_signal, segment,
                            synthesize_surrogate)


def _raw(n, seed=0, condition=UNDAMAGED):
    return RawSignal(np.random.default_rng(seed).normal(size=n), 1024.0, condition, 1, "real")


def _segs(n, condition, source="real", length=8, seed=0):
    rng = np.random.default_rng(seed)
    return [Segment(rng.normal(size=length), condition, 1, source, i) for i in range(n)]


# -- loading ----------------------------------------------------------------

def test_csv_roundtrip(tmp_path):
    p = tmp_path / "sig.csv"
    p.write_text("\n".join(str(v) for v in range(262_144)) + "\n")
    raw = load_signal(p, "csv")
    assert len(raw) == 262_144
    assert raw.samples[-1] == 262_143.0


def test_binary_length(tmp_path):
    p = tmp_path / "sig.f64"
    p.write_bytes(np.arange(1024, dtype="<f8").tobytes())
    assert len(p.read_bytes()) == 8192
    assert len(load_signal(p)) == 1024


def test_empty_file_rejected(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(IngestionError):
        load_signal(p)


def test_bad_inputs_name_offsets(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1.0\n2.0\nabc\n")
    with pytest.raises(IngestionError, match="line 3"):
        load_signal(p)
    q = tmp_path / "nan.f64"
    q.write_bytes(np.array([1.0, np.nan], dtype="<f8").tobytes())
    with pytest.raises(IngestionError, match="offset 1"):
        load_signal(q)
    r = tmp_path / "odd.f64"
    r.write_bytes(b"\x00" * 12)
    with pytest.raises(IngestionError, match="offset 8"):
        load_signal(r)
    with pytest.raises(IngestionError, match="need at least"):
        load_signal(_short(tmp_path), seg_len=64)
    with pytest.raises(IngestionError, match="no such file"):
        load_signal(tmp_path / "missing.csv")


def _short(tmp_path):
    p = tmp_path / "short.csv"
    p.write_text("1\n2\n3\n")
    return p


def test_metadata_sidecar(tmp_path):
    raw = RawSignal(np.arange(16.0), 512.0, DAMAGED, 3, "real")
    save_signal(raw, tmp_path / "s.f64")
    back = load_signal(tmp_path / "s.f64")
    assert np.array_equal(back.samples, raw.samples)
    assert (back.sample_rate_hz, back.condition, back.joint_id) == (512.0, DAMAGED, 3)


def test_raw_signal_invariants():
    with pytest.raises(ValueError):
        RawSignal(np.array([]), 1024.0, 0, 1, "real")
    with pytest.raises(ValueError):
        RawSignal(np.array([1.0, np.inf]), 1024.0, 0, 1, "real")
    with pytest.raises(ValueError):
        RawSignal(np.ones(3), 1024.0, 2, 1, "real")


# -- segmentation -----------------------------------------------------------

@pytest.mark.parametrize("n,seg_len,count", [(262_144, 1024, 256), (1024, 1024, 1), (2500, 1024, 2), (6400, 64, 100)])
def test_segment_counts(n, seg_len, count):
    assert len(segment(_raw(n), seg_len)) == count


def test_single_segment_equals_input():
    raw = _raw(1024)
    assert np.array_equal(segment(raw, 1024)[0].values, raw.samples)


def test_segment_too_long():
    with pytest.raises(ValueError):
        segment(_raw(10), 64)


@given(st.integers(1, 500), st.integers(1, 64))
def test_segment_concat_reproduces_prefix(n, seg_len):
    raw = _raw(n + seg_len)
    segs = segment(raw, seg_len)
    joined = np.concatenate([s.values for s in segs])
    assert np.array_equal(joined, raw.samples[: len(segs) * seg_len])
    assert all(len(s) == seg_len for s in segs)


def test_shuffle_is_a_seeded_permutation():
    raw = _raw(640)
    a = segment(raw, 64, shuffle=True, rng=np.random.default_rng(3))
    b = segment(raw, 64, shuffle=True, rng=np.random.default_rng(3))
    assert [s.segment_index for s in a] == [s.segment_index for s in b]
    assert sorted(s.segment_index for s in a) == list(range(10))


# -- normalisation ----------------------------------------------------------

def _seg(values):
    return Segment(np.asarray(values, dtype=float), 0, 1, "real", 0)


def test_minmax_examples():
    assert normalize_minmax(_seg([0, 5, 10]))[0].values.tolist() == [-1.0, 0.0, 1.0]
    assert normalize_minmax(_seg([2, 4]))[0].values.tolist() == [-1.0, 1.0]
    with pytest.raises(DegenerateRangeError):
        normalize_minmax(_seg([3, 3, 3]))


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(np.float64, st.integers(2, 64), elements=finite))
def test_minmax_range_and_inverse(v):
    if v.max() - v.min() < 1e-6 * max(1.0, np.abs(v).max()):
        return
    out, scale, offset = normalize_minmax(_seg(v))
    assert out.values.min() == -1.0 and out.values.max() == 1.0
    back = denormalize(out, scale, offset).values
    assert np.abs(back - v).max() <= 1e-12 * np.abs(v).max()


# -- surrogate --------------------------------------------------------------

def test_surrogate_determinism():
    spec = SurrogateSpec(duration_s=1.0)
    a = synthesize_surrogate(spec, DAMAGED, np.random.default_rng(4)).samples
    b = synthesize_surrogate(spec, DAMAGED, np.random.default_rng(4)).samples
    assert np.array_equal(a, b)


def test_surrogate_bounded_without_noise():
    amp = 0.3
    spec = SurrogateSpec(modes=[Mode(50.0, 0.0, amp)], noise_std=0.0, excitation_rate_hz=5.0, duration_s=2.0)
    rng = np.random.default_rng(1)
    raw = synthesize_surrogate(spec, UNDAMAGED, rng)
    hits = np.random.default_rng(1).poisson(spec.excitation_rate_hz * spec.duration_s)
    assert np.abs(raw.samples).max() <= amp * hits + 1e-12


def test_identity_damage_shift_matches_undamaged():
    spec = SurrogateSpec(damage_freq_shift=1.0, damage_amp_shift=1.0, duration_s=1.0)
    a = synthesize_surrogate(spec, UNDAMAGED, np.random.default_rng(2)).samples
    b = synthesize_surrogate(spec, DAMAGED, np.random.default_rng(2)).samples
    assert np.array_equal(a, b)


def test_damage_shift_lowers_dominant_frequency():
    spec = SurrogateSpec()
    freqs = []
    for cond in (UNDAMAGED, DAMAGED):
        x = synthesize_surrogate(spec, cond, np.random.default_rng(0)).samples
        p = np.abs(np.fft.rfft(x)) ** 2
        freqs.append(np.fft.rfftfreq(x.size, 1 / spec.sample_rate_hz)[np.argmax(p)])
    assert freqs[1] == pytest.approx(freqs[0] / 2, rel=0.05)


@pytest.mark.parametrize("kw", [dict(modes=[Mode(600.0, 0.01, 1.0)]), dict(modes=[Mode(100.0, 1.0, 1.0)]),
                                dict(modes=[]), dict(damage_freq_shift=[0.5]), dict(noise_std=-1.0),
                                dict(modes=[Mode(300.0, 0.01, 1.0)], damage_freq_shift=2.0)])
def test_surrogate_spec_validation(kw):
    with pytest.raises(ValueError):
        SurrogateSpec(**kw)


def test_surrogate_spec_accepts_plain_modes():
    spec = SurrogateSpec(modes=[[100, 0.02, 0.1], {"frequency_hz": 200, "damping_ratio": 0.01, "amplitude": 0.1}])
    assert spec.modes[0] == Mode(100, 0.02, 0.1)
    assert SurrogateSpec(**spec.to_dict()) == spec


# -- scenarios --------------------------------------------------------------

def test_scenario1_defaults():
    split = build_scenario(_segs(100, 0), _segs(100, 1, seed=1), None, 1, np.random.default_rng(0))
    assert len(split.train) == 120 and len(split.test) == 30
    assert sum(lab for _, lab in split.train) == 60 and sum(lab for _, lab in split.test) == 15
    assert all(s.source == "real" for s, _ in split.train + split.test)


def test_scenario2_test_damaged_is_fake():
    split = build_scenario(_segs(100, 0), _segs(100, 1, seed=1), _segs(30, 1, "fake", seed=2), 2,
                           np.random.default_rng(0))
    dam = [s for s, lab in split.test if lab == 1]
    und = [s for s, lab in split.test if lab == 0]
    assert len(dam) == 15 and all(s.source == "fake" for s in dam)
    assert all(s.source == "real" for s in und)
    assert all(s.source == "real" for s, _ in split.train)


def test_exact_pools_use_every_segment_once():
    und, dam = _segs(75, 0), _segs(75, 1, seed=1)
    split = build_scenario(und, dam, None, 1, np.random.default_rng(5))
    used = [s.key for s, _ in split.train + split.test]
    assert len(used) == len(set(used)) == 150


@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_split_invariants(seed, sid):
    split = build_scenario(_segs(80, 0), _segs(80, 1, seed=1), _segs(20, 1, "fake", seed=2), sid,
                           np.random.default_rng(seed))
    train = {s.key for s, _ in split.train}
    test = {s.key for s, _ in split.test}
    assert not train & test
    for part in (split.train, split.test):
        labels = [lab for _, lab in part]
        assert labels.count(0) == labels.count(1)
    for s, lab in split.train + split.test:
        assert s.condition == lab


def test_allocation_error_reports_shortfall():
    with pytest.raises(AllocationError, match="short by 5"):
        build_scenario(_segs(70, 0), _segs(100, 1), None, 1, np.random.default_rng(0))
    with pytest.raises(AllocationError):
        build_scenario(_segs(100, 0), _segs(100, 1), None, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_scenario(_segs(100, 0), _segs(100, 1), None, 3, np.random.default_rng(0))


def test_pool_roundtrip(tmp_path):
    segs = _segs(5, 1, "fake")
    save_pool(segs, tmp_path / "pool")
    back = load_pool(tmp_path / "pool")
    assert [s.key for s in back] == [s.key for s in segs]
    assert all(np.array_equal(a.values, b.values) for a, b in zip(segs, back))
