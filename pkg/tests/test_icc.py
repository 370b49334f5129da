import numpy as np
import pytest

from mindread.icc import icc, load_ratings

# Shrout & Fleiss (1979), Table 2: 6 targets rated by 4 judges.
SF = np.array(
    [
        [9, 2, 5, 8],
        [6, 1, 3, 2],
        [8, 4, 6, 8],
        [7, 1, 2, 6],
        [10, 5, 6, 9],
        [6, 2, 4, 7],
    ],
    dtype=float,
)


def anova_oracle(Y):
    """Mean squares by explicit loops."""
    n, k = len(Y), len(Y[0])
    grand = sum(sum(r) for r in Y) / (n * k)
    row_means = [sum(r) / k for r in Y]
    col_means = [sum(Y[i][j] for i in range(n)) / n for j in range(k)]
    bms = k * sum((m - grand) ** 2 for m in row_means) / (n - 1)
    jms = n * sum((m - grand) ** 2 for m in col_means) / (k - 1)
    ems = sum(
        (Y[i][j] - row_means[i] - col_means[j] + grand) ** 2 for i in range(n) for j in range(k)
    ) / ((n - 1) * (k - 1))
    wms = sum((Y[i][j] - row_means[i]) ** 2 for i in range(n) for j in range(k)) / (n * (k - 1))
    return {
        "oneway": (bms - wms) / (bms + (k - 1) * wms),
        "twoway_random_agreement": (bms - ems) / (bms + (k - 1) * ems + k * (jms - ems) / n),
        "twoway_random_consistency": (bms - ems) / (bms + (k - 1) * ems),
    }


@pytest.mark.parametrize("model", ["oneway", "twoway_random_agreement", "twoway_random_consistency"])
def test_worked_matrix_matches_oracle(model):
    assert icc(SF, model) == pytest.approx(anova_oracle(SF.tolist())[model], abs=1e-10)


def test_worked_matrix_published_values():
    # Shrout & Fleiss, Table 4: ICC(1,1)=.17, ICC(2,1)=.29, ICC(3,1)=.71
    assert round(icc(SF, "oneway"), 2) == 0.17
    assert round(icc(SF, "twoway_random_agreement"), 2) == 0.29
    assert round(icc(SF, "twoway_random_consistency"), 2) == 0.71


@pytest.mark.parametrize("model", ["oneway", "twoway_random_agreement", "twoway_random_consistency"])
def test_perfect_agreement(model):
    Y = np.repeat(np.arange(10.0)[:, None], 5, axis=1)
    assert icc(Y, model) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("model", ["oneway", "twoway_random_agreement", "twoway_random_consistency"])
def test_pure_noise_near_zero(model):
    Y = np.random.default_rng(0).normal(size=(1000, 5))
    assert abs(icc(Y, model)) < 0.05


def test_random_matrices_match_oracle(rng):
    for _ in range(20):
        Y = rng.normal(size=(rng.integers(2, 9), rng.integers(2, 6))) + rng.normal(size=(1,))
        expected = anova_oracle(Y.tolist())
        for model, value in expected.items():
            assert icc(Y, model) == pytest.approx(value, abs=1e-10)


@pytest.mark.parametrize("model", ["twoway_random_agreement", "twoway_random_consistency", "oneway"])
def test_shift_invariance(model, rng):
    Y = rng.normal(size=(12, 4)) + rng.normal(size=(12, 1)) * 3
    assert icc(Y + 17.5, model) == pytest.approx(icc(Y, model), abs=1e-10)


def test_undefined_and_invalid():
    with pytest.raises(ValueError, match="undefined"):
        icc(np.ones((4, 3)))
    with pytest.raises(ValueError):
        icc(np.ones((1, 3)))
    with pytest.raises(ValueError):
        icc([[1.0, np.nan], [2.0, 3.0]])
    with pytest.raises(ValueError):
        icc(SF, "icc9")


def test_load_ratings(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("subject,r1,r2\na,1,1\nb,2,2\nc,5,5\n")
    np.testing.assert_array_equal(load_ratings(path), [[1, 1], [2, 2], [5, 5]])
    path.write_text("r1,r2\n1,1\n2\n")
    with pytest.raises(ValueError):
        load_ratings(path)
