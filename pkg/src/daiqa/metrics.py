"""Scalar evaluation: correlation metrics, confusion matrices, logistic fitting,
and the full-reference pseudo-label oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from skimage.metrics import structural_similarity

from .errors import DataError
from .validation import check_vector_pair


def plcc(y, yhat):
    """Pearson linear correlation coefficient between two score vectors."""
    a, b = check_vector_pair(y, yhat)
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.sum(da * da))
    nb = np.sqrt(np.sum(db * db))
    if na == 0 or nb == 0:
        raise DataError("correlation undefined for a constant vector")
    return float(np.clip(np.sum(da * db) / (na * nb), -1.0, 1.0))


def srocc(y, yhat):
    """Spearman rank-order correlation.

    Tie-free data uses the closed form 1 - 6*sum(d^2)/(N(N^2-1)); with ties the
    Pearson correlation of average ranks is used (the two agree when tie-free).
    """
    a, b = check_vector_pair(y, yhat)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DataError("rank correlation undefined for a constant vector")
    ra = rankdata(a)
    rb = rankdata(b)
    has_ties = len(np.unique(a)) < len(a) or len(np.unique(b)) < len(b)
    if has_ties:
        return plcc(ra, rb)
    n = len(a)
    d = ra - rb
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1)))


@dataclass
class ConfusionResult:
    matrix: np.ndarray  # rows normalized to sum 1 (zero rows excepted)
    accuracy: float
    counts: np.ndarray
    empty_classes: list = field(default_factory=list)


def confusion(true_domains, pred_domains, n_domains):
    """Row-normalized confusion matrix plus overall accuracy.

    Row r, column c holds the fraction of class-r samples predicted as c.
    Classes with no samples yield an all-zero row and are listed in
    ``empty_classes``.
    """
    t = np.asarray(true_domains, dtype=int)
    p = np.asarray(pred_domains, dtype=int)
    if t.shape != p.shape:
        raise DataError("label vectors differ in length")
    if t.size and (t.min() < 0 or t.max() >= n_domains or p.min() < 0 or p.max() >= n_domains):
        raise DataError(f"labels must lie in [0, {n_domains})")
    counts = np.zeros((n_domains, n_domains), dtype=np.int64)
    for ti, pi in zip(t, p):
        counts[ti, pi] += 1
    row_sums = counts.sum(axis=1)
    matrix = np.zeros((n_domains, n_domains))
    empty = []
    for r in range(n_domains):
        if row_sums[r] == 0:
            empty.append(r)
        else:
            matrix[r] = counts[r] / row_sums[r]
    accuracy = float(np.trace(counts) / t.size) if t.size else 0.0
    return ConfusionResult(matrix=matrix, accuracy=accuracy, counts=counts, empty_classes=empty)


def logistic_curve(x, beta):
    b1, b2, b3, b4 = beta
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(np.clip(b2 * (x - b3), -500, 500)))) + b4


def _logistic_jacobian(x, beta):
    b1, b2, b3, b4 = beta
    z = np.clip(b2 * (x - b3), -500, 500)
    sig = 1.0 / (1.0 + np.exp(-z))
    dsig = sig * (1.0 - sig)
    J = np.empty((len(x), 4))
    J[:, 0] = 0.5 - (1.0 - sig)
    J[:, 1] = b1 * dsig * (x - b3)
    J[:, 2] = -b1 * dsig * b2
    J[:, 3] = 1.0
    return J


@dataclass
class LogisticFit:
    beta: np.ndarray
    fitted: np.ndarray
    rss: float
    converged: bool


def logistic_fit(yhat, y, max_iter=200, tol=1e-12):
    """Fit the 4-parameter logistic y ~ b1*(1/2 - 1/(1+exp(b2*(yhat-b3)))) + b4.

    Damped Gauss-Newton (Levenberg). Initialization: b3 at the median of yhat,
    b2 from the spread of yhat, b1/b4 from the extremes of y. Non-convergence
    returns the best parameters seen with converged=False.
    """
    x, t = check_vector_pair(yhat, y, min_len=5)
    sign = 1.0
    if np.std(x) > 0 and np.std(t) > 0:
        sign = np.sign(np.corrcoef(x, t)[0, 1]) or 1.0
    spread = np.std(x) if np.std(x) > 0 else 1.0
    beta = np.array(
        [sign * (t.max() - t.min() + 1e-12), 2.0 / spread, np.median(x), t.mean()]
    )
    resid = t - logistic_curve(x, beta)
    best_rss = float(resid @ resid)
    best_beta = beta.copy()
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        J = _logistic_jacobian(x, beta)
        g = J.T @ resid
        A = J.T @ J + lam * np.eye(4)
        try:
            step = np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        cand = beta + step
        cand_resid = t - logistic_curve(x, cand)
        cand_rss = float(cand_resid @ cand_resid)
        if cand_rss < best_rss:
            if best_rss - cand_rss < tol * max(best_rss, 1e-30):
                beta, resid, best_rss, best_beta = cand, cand_resid, cand_rss, cand.copy()
                converged = True
                break
            beta, resid = cand, cand_resid
            best_rss, best_beta = cand_rss, cand.copy()
            lam = max(lam / 10, 1e-12)
        else:
            lam *= 10
            if lam > 1e12:
                break
    return LogisticFit(
        beta=best_beta,
        fitted=logistic_curve(x, best_beta),
        rss=best_rss,
        converged=converged,
    )


def psnr(a, b, peak=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def pseudo_label(distorted, reference, oracle="psnr_mapped", plugin=None):
    """Full-reference stand-in score in [0, 1], higher = better.

    psnr_mapped clamps PSNR/50 into [0, 1]; ssim_like maps SSIM through
    max(ssim, 0); plugin calls a user-supplied (distorted, reference) -> score.
    """
    d = np.asarray(distorted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if d.shape != r.shape:
        raise DataError(f"shape mismatch: {d.shape} vs {r.shape}")
    if oracle == "psnr_mapped":
        return float(np.clip(psnr(d, r) / 50.0, 0.0, 1.0))
    if oracle == "ssim_like":
        kwargs = {"data_range": 1.0}
        if d.ndim == 3:
            kwargs["channel_axis"] = -1
        val = structural_similarity(r, d, **kwargs)
        return float(np.clip(val, 0.0, 1.0))
    if oracle == "plugin":
        if plugin is None:
            raise DataError("plugin oracle selected but no plugin callable given")
        return float(np.clip(plugin(d, r), 0.0, 1.0))
    raise DataError(f"unknown oracle {oracle!r}")


@dataclass
class EvalReport:
    srocc: float
    plcc: float
    n: int
    confusion: np.ndarray | None = None
    accuracy: float | None = None
    logistic_params: np.ndarray | None = None
    plcc_after_fit: float | None = None

    def to_json(self):
        return {
            "srocc": self.srocc,
            "plcc": self.plcc,
            "n": self.n,
            "confusion": None if self.confusion is None else self.confusion.tolist(),
            "accuracy": self.accuracy,
            "logistic_params": (
                None if self.logistic_params is None else list(map(float, self.logistic_params))
            ),
            "plcc_after_fit": self.plcc_after_fit,
        }


def evaluate_scores(y_true, y_pred, true_domains=None, pred_domains=None, n_domains=None):
    """Bundle SROCC/PLCC (raw and after logistic mapping) plus optional confusion."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    fit = logistic_fit(y_pred, y_true) if len(y_true) >= 5 else None
    report = EvalReport(
        srocc=srocc(y_true, y_pred),
        plcc=plcc(y_true, y_pred),
        n=len(y_true),
        logistic_params=None if fit is None else fit.beta,
        plcc_after_fit=None if fit is None else plcc(y_true, fit.fitted),
    )
    if true_domains is not None and pred_domains is not None:
        if n_domains is None:
            n_domains = int(max(np.max(true_domains), np.max(pred_domains))) + 1
        conf = confusion(true_domains, pred_domains, n_domains)
        report.confusion = conf.matrix
        report.accuracy = conf.accuracy
    return report
