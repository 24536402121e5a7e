import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moesim.traffic import (
    ExpertPlacement,
    RoutingTrace,
    TraceFormatError,
    TraceValidationError,
    TrafficMatrix,
    build_matrix,
    format_trace,
    gen_synthetic,
    load_matrix,
    load_placement,
    load_trace,
    parse_trace,
    save_matrix,
    save_placement,
    save_trace,
    transpose,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadTrace:
    def test_two_tokens(self, tmp_path):
        p = write(tmp_path, "t.trace", "moetrace v1 2 4 2\n0 0 1\n1 2 3\n")
        tr = load_trace(p)
        assert tr.n_ranks == 2 and tr.top_k == 2 and tr.n_experts == 4
        assert tr.token_origin.tolist() == [0, 1]
        assert tr.expert_ids.tolist() == [[0, 1], [2, 3]]

    def test_empty_token_list(self, tmp_path):
        tr = load_trace(write(tmp_path, "t.trace", "moetrace v1 4 8 2\n"))
        assert tr.n_tokens == 0
        assert tr.expert_ids.shape == (0, 2)

    def test_expert_id_out_of_range(self, tmp_path):
        p = write(tmp_path, "t.trace", "moetrace v1 2 4 2\n0 0 1\n1 2 4\n")
        with pytest.raises(TraceValidationError) as exc:
            load_trace(p)
        assert exc.value.token == 1

    def test_origin_out_of_range(self):
        with pytest.raises(TraceValidationError, match="token 0"):
            parse_trace("moetrace v1 2 4 1\n2 0\n")

    def test_duplicate_experts_rejected(self):
        with pytest.raises(TraceValidationError, match="duplicate"):
            parse_trace("moetrace v1 2 4 2\n0 1 1\n")

    @pytest.mark.parametrize(
        "text,line",
        [
            ("moetrace v2 2 4 2\n", 1),
            ("moetrace v1 2 4\n", 1),
            ("moetrace v1 2 4 2\n0 1\n", 2),
            ("moetrace v1 2 4 2\n0 1 x\n", 2),
            ("# comment\nmoetrace v1 2 4 2\n0 1 2\n\n1 2\n", 5),
        ],
    )
    def test_parse_errors_carry_line(self, text, line):
        with pytest.raises(TraceFormatError) as exc:
            parse_trace(text)
        assert exc.value.line == line

    def test_roundtrip(self, tmp_path):
        tr = gen_synthetic(4, 8, 3, 10, skew=1.2, seed=5)
        save_trace(tr, tmp_path / "x.trace")
        assert load_trace(tmp_path / "x.trace") == tr
        assert format_trace(tr).splitlines()[0] == "moetrace v1 4 8 3"


class TestPlacement:
    def test_round_robin_default(self):
        p = ExpertPlacement.round_robin(8, 3)
        assert p.expert_to_rank.tolist() == [0, 1, 2, 0, 1, 2, 0, 1]

    def test_file_roundtrip(self, tmp_path):
        p = ExpertPlacement(4, 2, np.array([1, 1, 0, 0]))
        save_placement(p, tmp_path / "p.txt")
        assert load_placement(tmp_path / "p.txt") == p

    def test_missing_expert(self, tmp_path):
        with pytest.raises(TraceFormatError, match="without a rank"):
            load_placement(write(tmp_path, "p.txt", "placement v1 3 2\n0 0\n1 1\n"))

    def test_rank_out_of_range(self):
        with pytest.raises(ValueError):
            ExpertPlacement(2, 2, np.array([0, 2]))


class TestBuildMatrix:
    def test_single_token_top2(self):
        tr = RoutingTrace(3, 3, 2, np.array([0]), np.array([[1, 2]]))
        m = build_matrix(tr)
        assert m.counts.tolist() == [[0, 1, 1], [0, 0, 0], [0, 0, 0]]

    def test_zero_tokens(self):
        tr = RoutingTrace(3, 3, 1, np.zeros(0, dtype=int), np.zeros((0, 1), dtype=int))
        assert build_matrix(tr) == TrafficMatrix.zeros(3)

    def test_accumulation(self):
        tr = RoutingTrace(2, 2, 1, np.zeros(4, dtype=int), np.ones((4, 1), dtype=int))
        assert build_matrix(tr).counts[0, 1] == 4

    def test_local_tokens_on_diagonal(self):
        tr = RoutingTrace(2, 2, 1, np.array([0, 1]), np.array([[0], [1]]))
        assert build_matrix(tr).counts.tolist() == [[1, 0], [0, 1]]

    def test_dimension_mismatch(self):
        tr = gen_synthetic(2, 4, 1, 3, seed=0)
        with pytest.raises(ValueError, match="does not match"):
            build_matrix(tr, ExpertPlacement.round_robin(8, 2))

    @settings(max_examples=40, deadline=None)
    @given(
        n_ranks=st.integers(1, 6),
        per_rank=st.integers(1, 4),
        top_k=st.integers(1, 4),
        tokens=st.integers(0, 40),
        skew=st.floats(0, 3),
        seed=st.integers(0, 2**31),
    )
    def test_mass_and_row_sums(self, n_ranks, per_rank, top_k, tokens, skew, seed):
        n_experts = n_ranks * per_rank
        top_k = min(top_k, n_experts)
        tr = gen_synthetic(n_ranks, n_experts, top_k, tokens, skew, seed)
        m = build_matrix(tr)
        assert m.total == tr.n_tokens * top_k
        origin_counts = np.bincount(tr.token_origin, minlength=n_ranks)
        assert m.counts.sum(axis=1).tolist() == (origin_counts * top_k).tolist()


class TestGenSynthetic:
    def test_uniform_columns_balanced(self):
        tr = gen_synthetic(8, 16, 2, 2048, skew=0.0, seed=1)
        assert tr.n_tokens >= 10_000
        cols = build_matrix(tr).counts.sum(axis=0)
        assert cols.max() <= 1.2 * cols.min()

    def test_exhaustive_routing(self):
        tr = gen_synthetic(4, 8, 8, 5, skew=2.0, seed=3)
        m = build_matrix(tr)
        assert m.counts.sum(axis=1).tolist() == [5 * 8] * 4
        assert all(sorted(row) == list(range(8)) for row in tr.expert_ids.tolist())

    def test_deterministic(self):
        a = gen_synthetic(8, 8, 2, 64, skew=1.1, seed=42)
        b = gen_synthetic(8, 8, 2, 64, skew=1.1, seed=42)
        assert a == b
        assert a != gen_synthetic(8, 8, 2, 64, skew=1.1, seed=43)

    def test_skew_concentrates_on_low_ids(self):
        tr = gen_synthetic(4, 8, 1, 1000, skew=2.0, seed=0)
        hist = np.bincount(tr.expert_ids.ravel(), minlength=8)
        assert hist[0] > hist[1] > hist[7]

    @pytest.mark.parametrize(
        "args",
        [(3, 8, 2, 10), (4, 8, 9, 10), (4, 8, 0, 10), (4, 8, 2, -1), (0, 8, 2, 1)],
    )
    def test_invalid_params(self, args):
        with pytest.raises(ValueError):
            gen_synthetic(*args)

    def test_negative_skew(self):
        with pytest.raises(ValueError):
            gen_synthetic(4, 8, 2, 10, skew=-0.5)


class TestTrafficMatrix:
    def test_transpose(self):
        m = TrafficMatrix(np.array([[0, 3], [5, 0]]))
        assert transpose(m).counts.tolist() == [[0, 5], [3, 0]]

    def test_symmetric_fixed_point(self):
        m = TrafficMatrix(np.array([[1, 2], [2, 7]]))
        assert transpose(m) == m

    @settings(max_examples=30)
    @given(st.integers(1, 6).flatmap(lambda n: st.lists(st.integers(0, 99), min_size=n * n, max_size=n * n)))
    def test_involution_and_mass(self, cells):
        n = int(round(len(cells) ** 0.5))
        m = TrafficMatrix(np.array(cells).reshape(n, n))
        assert transpose(transpose(m)) == m
        assert transpose(m).total == m.total

    @pytest.mark.parametrize("bad", [[[1, 2, 3]], [[-1, 0], [0, 0]], [[0.5, 0], [0, 0]]])
    def test_invariants(self, bad):
        with pytest.raises(ValueError):
            TrafficMatrix(np.array(bad))

    def test_immutable(self):
        m = TrafficMatrix(np.eye(2, dtype=int))
        with pytest.raises(ValueError):
            m.counts[0, 0] = 5

    def test_csv_roundtrip(self, tmp_path):
        m = TrafficMatrix(np.array([[0, 7, 1], [2, 0, 0], [9, 9, 9]]))
        save_matrix(m, tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text() == "0,7,1\n2,0,0\n9,9,9\n"
        assert load_matrix(tmp_path / "m.csv") == m

    @pytest.mark.parametrize("text", ["1,2\n3\n", "a,b\nc,d\n", "", "1,-2\n3,4\n"])
    def test_bad_csv(self, tmp_path, text):
        with pytest.raises(TraceFormatError):
            load_matrix(write(tmp_path, "m.csv", text))
