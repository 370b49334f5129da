"""Single-rater intraclass correlation coefficients (Shrout & Fleiss, 1979).

=============================  ==========  ======================================
model                          S&F name    formula
=============================  ==========  ======================================
``oneway``                     ICC(1,1)    (MSR - MSW) / (MSR + (k-1) MSW)
``twoway_random_agreement``    ICC(2,1)    (MSR - MSE) / (MSR + (k-1) MSE + k (MSC - MSE) / n)
``twoway_random_consistency``  ICC(3,1)    (MSR - MSE) / (MSR + (k-1) MSE)
=============================  ==========  ======================================
"""

import csv

import numpy as np

MODELS = ("oneway", "twoway_random_consistency", "twoway_random_agreement")


def anova_mean_squares(ratings):
    """Return ``(MSR, MSC, MSE, MSW)`` for a subjects x raters matrix."""
    Y = np.asarray(ratings, dtype=np.float64)
    n, k = Y.shape
    grand = Y.mean()
    ss_total = ((Y - grand) ** 2).sum()
    ss_rows = k * ((Y.mean(axis=1) - grand) ** 2).sum()
    ss_cols = n * ((Y.mean(axis=0) - grand) ** 2).sum()
    ss_err = ss_total - ss_rows - ss_cols
    ss_within = ss_total - ss_rows
    return (
        ss_rows / (n - 1),
        ss_cols / (k - 1),
        ss_err / ((n - 1) * (k - 1)),
        ss_within / (n * (k - 1)),
    )


def check_ratings(ratings):
    Y = np.asarray(ratings, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError(f"ratings must be a subjects x raters matrix, got shape {Y.shape}")
    if Y.shape[0] < 2 or Y.shape[1] < 2:
        raise ValueError(f"need at least 2 subjects and 2 raters, got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("ratings contain missing or non-finite cells")
    return Y


def icc(ratings, model="twoway_random_agreement"):
    """Single-rater ICC of a complete ratings matrix.

    Parameters
    ----------
    ratings : array-like of shape (n_subjects, n_raters)
    model : {"oneway", "twoway_random_consistency", "twoway_random_agreement"}

    Raises
    ------
    ValueError
        If the matrix is invalid or the coefficient is undefined (zero
        denominator, e.g. every rating identical).
    """
    Y = check_ratings(ratings)
    n, k = Y.shape
    msr, msc, mse, msw = anova_mean_squares(Y)
    if model == "oneway":
        num, den = msr - msw, msr + (k - 1) * msw
    elif model == "twoway_random_consistency":
        num, den = msr - mse, msr + (k - 1) * mse
    elif model == "twoway_random_agreement":
        num, den = msr - mse, msr + (k - 1) * mse + k * (msc - mse) / n
    else:
        raise ValueError(f"unknown ICC model {model!r}; choose from {MODELS}")
    scale = max(abs(msr), abs(msc), abs(mse), abs(msw), 1.0)
    if abs(den) <= 1e-12 * scale:
        raise ValueError("ICC undefined: no between-subject or residual variance")
    return float(num / den)


def load_ratings(path):
    """Read a comma-separated ratings grid with a header row.

    A first column headed ``subject`` is treated as labels and dropped.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty ratings file")
    header, body = rows[0], [r for r in rows[1:] if r]
    skip = 1 if header and header[0].strip().lower() == "subject" else 0
    try:
        data = [[float(v) for v in r[skip:]] for r in body]
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric rating ({exc})") from None
    if any(len(r) != len(header) - skip for r in data):
        raise ValueError(f"{path}: every row needs {len(header) - skip} ratings")
    return check_ratings(data)
