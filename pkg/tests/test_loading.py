import numpy as np
import pytest

from tlsekit import loading
from tlsekit.problem_gen import gen_uniform


def test_parse_with_header():
    M = loading.parse_csv_matrix("# 2 3\n1,2,3\n4,5,6\n")
    np.testing.assert_array_equal(M, [[1, 2, 3], [4, 5, 6]])


def test_parse_without_header():
    assert loading.parse_csv_matrix("1.5,2\n\n3,4e-3\n").shape == (2, 2)


def test_parse_empty_matrix_needs_header():
    assert loading.parse_csv_matrix("# 0 4\n").shape == (0, 4)
    with pytest.raises(loading.MatrixFormatError, match="header"):
        loading.parse_csv_matrix("")


@pytest.mark.parametrize(
    "text,match",
    [
        ("1,2\n3\n", "ragged"),
        ("# 3 2\n1,2\n3,4\n", "header says"),
        ("1,x\n", "line 1"),
        ("# 2\n1,2\n", "malformed header"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(loading.MatrixFormatError, match=match):
        loading.parse_csv_matrix(text, source="test.csv")


def test_csv_keeps_full_precision(tmp_path):
    M = np.random.default_rng(0).standard_normal((3, 2))
    path = str(tmp_path / "m.csv")
    loading.save_matrix(path, M)
    np.testing.assert_array_equal(loading.load_matrix(path), M)


def test_mtx_files(tmp_path):
    M = np.random.default_rng(1).standard_normal((4, 3))
    path = str(tmp_path / "m.mtx")
    loading.save_matrix(path, M)
    np.testing.assert_allclose(loading.load_matrix(path), M, rtol=1e-12)


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError, match="Unrecognized"):
        loading.save_matrix(str(tmp_path / "m.npy"), np.eye(2))
    with pytest.raises(ValueError, match="Unrecognized"):
        loading.load_matrix(str(tmp_path / "m.txt"))


def test_problem_directory(tmp_path):
    problem = gen_uniform(2, 8, 4, 1, seed=0)
    paths = loading.save_problem(problem, str(tmp_path / "prob"))
    assert sorted(paths) == ["A", "B", "C", "D"]
    loaded = loading.load_problem(**paths)
    np.testing.assert_array_equal(loaded.LH, problem.LH)


def test_unconstrained_problem_files(tmp_path):
    problem = gen_uniform(0, 8, 4, 1, seed=0)
    paths = loading.save_problem(problem, str(tmp_path))
    assert sorted(paths) == ["A", "B"]
    assert loading.load_problem(**paths).p == 0
    with pytest.raises(ValueError, match="together"):
        loading.load_problem(paths["A"], paths["B"], C=paths["A"])
