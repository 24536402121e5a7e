import pytest
from hypothesis import given
from hypothesis import strategies as st

from moesim.assignment import Permutation
from moesim.costmodel import (
    ComputeModel,
    NetworkModel,
    ProfileError,
    compute_time,
    load_profile,
    matching_time,
    wire_time,
)
from moesim.decompose import Matching

KNEE = ComputeModel.knee()
MODELS = [KNEE, ComputeModel.linear(1e-6), ComputeModel.from_table([(16, 1e-4), (256, 3e-4), (1024, 9e-4)])]


class TestCompute:
    def test_knee_floor(self):
        assert compute_time(KNEE, 64) == 250e-6

    def test_knee_linear_regime(self):
        assert compute_time(KNEE, 512) == 500e-6

    @pytest.mark.parametrize("model", MODELS)
    def test_zero_batch_is_free(self, model):
        assert compute_time(model, 0) == 0.0

    def test_negative_batch(self):
        with pytest.raises(ValueError):
            compute_time(KNEE, -1)

    @given(st.integers(1, 256))
    def test_knee_plateau(self, b):
        assert compute_time(KNEE, b) == KNEE.floor

    @given(st.integers(256, 10**6))
    def test_knee_linear_above(self, b):
        assert compute_time(KNEE, b) == KNEE.per_token * b

    @pytest.mark.parametrize("model", MODELS)
    @given(a=st.integers(0, 5000), b=st.integers(0, 5000))
    def test_monotone(self, model, a, b):
        lo, hi = sorted((a, b))
        assert compute_time(model, lo) <= compute_time(model, hi)

    def test_knee_not_homogeneous(self):
        assert compute_time(KNEE, 2 * 10) != 2 * compute_time(KNEE, 10)

    @given(st.integers(0, 1000), st.integers(1, 8))
    def test_linear_homogeneous(self, b, k):
        lin = ComputeModel.linear(3e-7)
        assert compute_time(lin, k * b) == pytest.approx(k * compute_time(lin, b))

    def test_invalid_models(self):
        with pytest.raises(ValueError):
            ComputeModel(kind="cubic")
        with pytest.raises(ValueError):
            ComputeModel.linear(-1.0)
        with pytest.raises(ValueError):
            ComputeModel.from_table([])
        with pytest.raises(ValueError):
            ComputeModel.from_table([(10, 1.0), (5, 2.0)])


class TestTable:
    def test_interpolation(self):
        m = ComputeModel.from_table([(256, 250e-6), (512, 500e-6)])
        assert compute_time(m, 384) == pytest.approx(375e-6, rel=1e-12)

    def test_plateau_below_and_extrapolation_above(self):
        m = ComputeModel.from_table([(256, 250e-6), (512, 500e-6)])
        assert compute_time(m, 1) == 250e-6
        assert compute_time(m, 1024) == pytest.approx(1000e-6)

    def test_single_row(self):
        m = ComputeModel.from_table([(128, 2e-4)])
        assert compute_time(m, 1) == 2e-4
        assert compute_time(m, 10_000) == 2e-4

    def test_load_profile(self, tmp_path):
        p = tmp_path / "prof.csv"
        p.write_text("batch,seconds\n256,250e-6\n512,500e-6\n")
        m = load_profile(p)
        assert m.kind == "table"
        assert compute_time(m, 384) == pytest.approx(375e-6)

    @pytest.mark.parametrize(
        "text,row",
        [
            ("batch,seconds\n512,1e-3\n256,2e-3\n", 3),
            ("batch,seconds\n1,2e-3\n2,1e-3\n", 3),
            ("batch,seconds\n1,abc\n", 2),
            ("b,s\n1,1\n", 1),
            ("batch,seconds\n1,1,1\n", 2),
        ],
    )
    def test_profile_errors(self, tmp_path, text, row):
        p = tmp_path / "prof.csv"
        p.write_text(text)
        with pytest.raises(ProfileError) as exc:
            load_profile(p)
        assert exc.value.row == row

    def test_empty_profile(self, tmp_path):
        p = tmp_path / "prof.csv"
        p.write_text("batch,seconds\n")
        with pytest.raises(ProfileError):
            load_profile(p)


class TestNetwork:
    def test_wire_time_zero(self):
        assert wire_time(NetworkModel(), 0) == 0.0

    def test_wire_time_arithmetic(self):
        net = NetworkModel(bandwidth=100e9, bytes_per_token=4096)
        assert wire_time(net, 1000) == pytest.approx(40.96e-6, rel=1e-12)

    def test_bandwidth_scaling(self):
        a, b = NetworkModel(bandwidth=50e9), NetworkModel(bandwidth=100e9)
        assert wire_time(b, 777) == pytest.approx(wire_time(a, 777) / 2)

    def test_matching_time_is_bottleneck(self):
        net = NetworkModel()
        m = Matching(Permutation((1, 0)), (10, 1))
        assert matching_time(net, m) == wire_time(net, 10)

    def test_uniform_matching(self):
        net = NetworkModel()
        m = Matching(Permutation((1, 2, 0)), (5, 5, 5))
        assert matching_time(net, m) == wire_time(net, 5)

    @given(st.lists(st.integers(0, 10_000), min_size=1, max_size=8).filter(any), st.integers(1, 5))
    def test_matching_time_max_and_homogeneous(self, tokens, k):
        net = NetworkModel()
        perm = Permutation(tuple(range(len(tokens))))
        t = matching_time(net, Matching(perm, tuple(tokens)))
        assert all(t >= wire_time(net, x) for x in tokens)
        scaled = matching_time(net, Matching(perm, tuple(k * x for x in tokens)))
        assert scaled == pytest.approx(k * t)

    def test_invalid(self):
        with pytest.raises(ValueError):
            NetworkModel(bandwidth=0)
        with pytest.raises(ValueError):
            NetworkModel(reconfig_delay=-1)
