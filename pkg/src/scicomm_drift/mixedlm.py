"""Random-intercept linear mixed models fit by profiled REML.

The model is y = X beta + Z u + eps with one random intercept per group,
u ~ N(0, sigma2_group I), eps ~ N(0, sigma2_resid I). Writing
lambda = sigma2_group / sigma2_resid, the marginal covariance per group is
sigma2 (I + lambda J), whose inverse is I - (lambda / (1 + lambda n_g)) J
in closed form, so the REML log-likelihood profiles down to a smooth
one-dimensional function of ln lambda that a golden-section search
maximizes. GLS at the chosen lambda gives the fixed effects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

POOLED_GROUP = "__pooled__"
Z_95 = 1.96


@dataclass
class CategoricalTerm:
    name: str
    reference: str
    levels: list[str] | None = None


@dataclass
class NumericTerm:
    name: str
    transform: str = "identity"   # identity | log1p


@dataclass
class RegressionSpec:
    response: str
    terms: list[CategoricalTerm | NumericTerm]
    group: str
    min_group_size: int = 31


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    groups: np.ndarray          # int index per row
    group_names: list[str]


def _numeric_value(row: dict, term: NumericTerm, row_idx: int) -> float:
    raw = row[term.name]
    if isinstance(raw, bool):
        raw = 1.0 if raw else 0.0
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ValidationError(
            f"row {row_idx}: field {term.name!r} is not numeric: {raw!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"row {row_idx}: field {term.name!r} is not finite")
    if term.transform == "identity":
        return value
    if term.transform == "log1p":
        if value < 0:
            raise ValidationError(
                f"row {row_idx}: log1p needs {term.name!r} >= 0, got {value}")
        return math.log1p(value)
    raise ValidationError(f"unknown transform {term.transform!r}")


def build_design(rows: Sequence[dict], spec: RegressionSpec) -> Design:
    """Assemble the fixed-effects matrix with treatment-coded categoricals.

    The intercept column comes first; each categorical term contributes one
    0/1 column per non-reference level (sorted), named "term: level". A
    level outside the declared set, a missing field, or a rank-deficient
    result is an error naming the offender.
    """
    if not rows:
        raise ValidationError("build_design: no rows")
    for idx, row in enumerate(rows):
        needed = [spec.response, spec.group] + [t.name for t in spec.terms]
        for key in needed:
            if key not in row:
                raise ValidationError(f"row {idx}: missing field {key!r}")

    columns: list[str] = ["Intercept"]
    builders: list[tuple[str, object]] = []
    for term in spec.terms:
        if isinstance(term, CategoricalTerm):
            observed = sorted({str(row[term.name]) for row in rows})
            declared = sorted(term.levels) if term.levels is not None else observed
            extra = set(observed) - set(declared)
            if extra:
                raise ValidationError(
                    f"field {term.name!r}: unseen levels {sorted(extra)} "
                    f"(declared {declared})")
            if term.reference not in observed:
                raise ValidationError(
                    f"field {term.name!r}: reference level {term.reference!r} "
                    f"absent from data")
            for level in declared:
                if level != term.reference:
                    columns.append(f"{term.name}: {level}")
                    builders.append(("cat", (term.name, level)))
        elif isinstance(term, NumericTerm):
            label = term.name if term.transform == "identity" else f"log1p({term.name})"
            columns.append(label)
            builders.append(("num", term))
        else:
            raise ValidationError(f"unknown term type {type(term).__name__}")

    n, p = len(rows), len(columns)
    X = np.ones((n, p))
    y = np.empty(n)
    for i, row in enumerate(rows):
        col = 1
        for kind, payload in builders:
            if kind == "cat":
                name, level = payload
                X[i, col] = 1.0 if str(row[name]) == level else 0.0
            else:
                X[i, col] = _numeric_value(row, payload, i)
            col += 1
        try:
            y[i] = float(row[spec.response])
        except (TypeError, ValueError):
            raise ValidationError(
                f"row {i}: response {spec.response!r} is not numeric") from None
    if not np.isfinite(y).all():
        raise ValidationError("response contains non-finite values")

    rank = np.linalg.matrix_rank(X)
    if rank < p:
        _, R = np.linalg.qr(X)
        diag = np.abs(np.diag(R))
        bad = [columns[j] for j in range(p)
               if diag[j] <= max(n, p) * np.finfo(float).eps * diag.max()]
        raise ValidationError(
            f"design matrix is rank deficient ({rank} < {p}); "
            f"collinear columns: {bad or columns}")

    names = sorted({str(row[spec.group]) for row in rows})
    index = {g: i for i, g in enumerate(names)}
    groups = np.array([index[str(row[spec.group])] for row in rows], dtype=np.int64)
    return Design(X=X, y=y, columns=columns, groups=groups, group_names=names)


def pool_small_groups(groups: np.ndarray, group_names: Sequence[str],
                      min_group_size: int) -> tuple[np.ndarray, list[str]]:
    """Merge every group smaller than min_group_size into one pooled group.

    Groups at or above the threshold keep their identity; the pooled group
    (if any) is appended last under the name "__pooled__".
    """
    if min_group_size < 1:
        raise ValidationError("min_group_size must be >= 1")
    sizes = np.bincount(groups, minlength=len(group_names))
    keep = [i for i in range(len(group_names)) if sizes[i] >= min_group_size]
    pooled = [i for i in range(len(group_names)) if 0 < sizes[i] < min_group_size]
    if not pooled:
        return groups.copy(), list(group_names)
    remap = {}
    new_names = []
    for i in keep:
        remap[i] = len(new_names)
        new_names.append(group_names[i])
    pooled_id = len(new_names)
    new_names.append(POOLED_GROUP)
    for i in pooled:
        remap[i] = pooled_id
    new_groups = np.array([remap[g] for g in groups], dtype=np.int64)
    return new_groups, new_names


@dataclass
class _GroupStats:
    XtX: np.ndarray
    Xty: np.ndarray
    yty: float
    sum_x: np.ndarray      # (G, p) per-group column sums
    sum_y: np.ndarray      # (G,)
    sizes: np.ndarray      # (G,)
    n: int
    p: int


def _collect_stats(X: np.ndarray, y: np.ndarray, groups: np.ndarray) -> _GroupStats:
    n, p = X.shape
    n_groups = int(groups.max()) + 1
    sum_x = np.zeros((n_groups, p))
    sum_y = np.zeros(n_groups)
    np.add.at(sum_x, groups, X)
    np.add.at(sum_y, groups, y)
    sizes = np.bincount(groups, minlength=n_groups)
    return _GroupStats(XtX=X.T @ X, Xty=X.T @ y, yty=float(y @ y),
                       sum_x=sum_x, sum_y=sum_y,
                       sizes=sizes.astype(np.float64), n=n, p=p)


def _profile(stats: _GroupStats, lam: float) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Profiled REML log-likelihood and GLS pieces at a fixed lambda.

    Returns (loglik, beta, XtWX, sigma2_resid).
    """
    w = lam / (1.0 + lam * stats.sizes)             # (G,)
    XtWX = stats.XtX - np.einsum("g,gi,gj->ij", w, stats.sum_x, stats.sum_x)
    XtWy = stats.Xty - (w * stats.sum_y) @ stats.sum_x
    ytWy = stats.yty - float(w @ (stats.sum_y ** 2))
    try:
        beta = np.linalg.solve(XtWX, XtWy)
    except np.linalg.LinAlgError:
        raise ValidationError("normal equations are singular; "
                              "check the design for collinearity") from None
    quad = ytWy - float(beta @ XtWy)
    dof = stats.n - stats.p
    if dof <= 0:
        raise ValidationError("need more observations than fixed effects")
    sigma2 = max(quad / dof, np.finfo(float).tiny)
    log_det_h = float(np.log1p(lam * stats.sizes).sum())
    sign, log_det_xtwx = np.linalg.slogdet(XtWX)
    if sign <= 0:
        raise ValidationError("normal equations lost positive definiteness")
    loglik = -0.5 * (dof * (math.log(2.0 * math.pi) + 1.0 + math.log(sigma2))
                     + log_det_h + log_det_xtwx)
    return loglik, beta, XtWX, sigma2


def profile_loglik(X: np.ndarray, y: np.ndarray, groups: np.ndarray,
                   ln_lambda: float | None) -> float:
    """REML profile value at ln lambda (None means lambda = 0 exactly)."""
    stats = _collect_stats(X, y, groups)
    lam = 0.0 if ln_lambda is None else math.exp(ln_lambda)
    return _profile(stats, lam)[0]


@dataclass
class LmmFit:
    columns: list[str]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    sigma2_resid: float
    sigma2_group: float
    lam: float
    reml_loglik: float
    converged: bool
    n_obs: int
    n_groups: int
    group_sizes: tuple[int, int, float] = dc_field(default=(0, 0, 0.0))

    @property
    def min_group_size(self) -> int:
        return self.group_sizes[0]

    @property
    def max_group_size(self) -> int:
        return self.group_sizes[1]

    @property
    def mean_group_size(self) -> float:
        return self.group_sizes[2]


def fit_reml(X: np.ndarray, y: np.ndarray, groups: np.ndarray,
             lambda_log_range: tuple[float, float] = (-12.0, 12.0),
             tol: float = 1e-8) -> LmmFit:
    """Maximize the profiled REML log-likelihood over ln lambda.

    Golden-section search (the profile is unimodal for these designs) down
    to ``tol`` on ln lambda; the exact lambda = 0 value is also evaluated,
    and when it does at least as well the fit reports the boundary solution
    with sigma2_group = 0 and OLS fixed effects. Confidence bounds are
    beta +- 1.96 se with se from the GLS covariance at the chosen lambda.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError("fit_reml: X and y shapes disagree")
    if groups.shape[0] != X.shape[0]:
        raise ValidationError("fit_reml: groups length disagrees with X")
    if groups.min() < 0:
        raise ValidationError("fit_reml: negative group index")
    stats = _collect_stats(X, y, groups)

    lo, hi = lambda_log_range
    if not lo < hi:
        raise ValidationError("lambda_log_range must be increasing")
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc = _profile(stats, math.exp(c))[0]
    fd = _profile(stats, math.exp(d))[0]
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = _profile(stats, math.exp(c))[0]
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = _profile(stats, math.exp(d))[0]
    ln_lam = 0.5 * (a + b)
    best = _profile(stats, math.exp(ln_lam))
    lam = math.exp(ln_lam)

    zero = _profile(stats, 0.0)
    if zero[0] >= best[0]:
        lam, best = 0.0, zero

    loglik, beta, XtWX, sigma2 = best
    cov = sigma2 * np.linalg.inv(XtWX)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p_values = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in z])
    sizes = stats.sizes
    return LmmFit(
        columns=[], beta=beta, se=se, z=z, p_values=p_values,
        ci_lo=beta - Z_95 * se, ci_hi=beta + Z_95 * se,
        sigma2_resid=sigma2, sigma2_group=lam * sigma2, lam=lam,
        reml_loglik=loglik, converged=True,
        n_obs=stats.n, n_groups=len(sizes),
        group_sizes=(int(sizes.min()), int(sizes.max()), float(sizes.mean())),
    )


def fit_design(design: Design, spec: RegressionSpec,
               lambda_log_range: tuple[float, float] = (-12.0, 12.0),
               tol: float = 1e-8) -> LmmFit:
    """Pool groups below the configured minimum, fit, and label the coefficients."""
    groups, _ = pool_small_groups(design.groups, design.group_names,
                                  spec.min_group_size)
    fit = fit_reml(design.X, design.y, groups, lambda_log_range, tol)
    fit.columns = list(design.columns)
    return fit


def emit_regression_table(fit: LmmFit, fmt: str = "text") -> str:
    """Render the fit as a fixed-effects table.

    text: aligned summary with a header block, one row per coefficient
    (Coef., Std.Err., z, P>|z|, [0.025, 0.975]) and a closing Group Var row.
    csv: full-precision values that parse back to the fit exactly.
    """
    if not fit.columns or len(fit.columns) != len(fit.beta):
        raise ValidationError("fit has no column labels to render")
    if fmt == "csv":
        lines = ["term,coef,std_err,z,p_value,ci_low,ci_high"]
        for j, name in enumerate(fit.columns):
            lines.append(",".join([
                '"%s"' % name.replace('"', '""'),
                repr(float(fit.beta[j])), repr(float(fit.se[j])),
                repr(float(fit.z[j])), repr(float(fit.p_values[j])),
                repr(float(fit.ci_lo[j])), repr(float(fit.ci_hi[j])),
            ]))
        lines.append('"Group Var",%s,,,,,' % repr(float(fit.sigma2_group)))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValidationError(f"unknown table format {fmt!r}")

    label_w = max(len(name) for name in fit.columns + ["Group Var"]) + 2
    num_w = 9
    header_cols = ["Coef.", "Std.Err.", "z", "P>|z|", "[0.025", "0.975]"]
    width = label_w + num_w * len(header_cols)
    lines = [
        "Mixed Linear Model Regression Results".center(width),
        "=" * width,
        f"{'No. Observations:':<20}{fit.n_obs:<12}{'Scale:':<16}{fit.sigma2_resid:.4f}",
        f"{'No. Groups:':<20}{fit.n_groups:<12}{'Log-Likelihood:':<16}{fit.reml_loglik:.4f}",
        f"{'Min. group size:':<20}{fit.min_group_size:<12}{'Converged:':<16}{'Yes' if fit.converged else 'No'}",
        f"{'Max. group size:':<20}{fit.max_group_size:<12}",
        f"{'Mean group size:':<20}{fit.mean_group_size:<12.1f}",
        "-" * width,
        " " * label_w + "".join(f"{h:>{num_w}}" for h in header_cols),
        "-" * width,
    ]
    for j, name in enumerate(fit.columns):
        cells = [fit.beta[j], fit.se[j], fit.z[j], fit.p_values[j],
                 fit.ci_lo[j], fit.ci_hi[j]]
        lines.append(f"{name:<{label_w}}" + "".join(f"{c:>{num_w}.3f}" for c in cells))
    lines.append(f"{'Group Var':<{label_w}}{fit.sigma2_group:>{num_w}.3f}")
    lines.append("=" * width)
    return "\n".join(lines) + "\n"


def emit_forest_plot(fit: LmmFit, svg_path: str | Path, csv_path: str | Path) -> None:
    """Write a deterministic forest plot (SVG) plus its values (CSV).

    One row per fixed-effect term: the marker sits at the coefficient, the
    whisker spans the 95% interval, and a dashed vertical line marks zero.
    The CSV flags terms whose interval excludes zero. Byte output depends
    only on the fit.
    """
    if not fit.columns or len(fit.columns) != len(fit.beta):
        raise ValidationError("fit has no column labels to render")
    n = len(fit.columns)
    row_h, top, bottom, left, right_m = 28, 46, 30, 190, 30
    width = 640
    height = top + bottom + row_h * n
    lo = min(0.0, float(fit.ci_lo.min()))
    hi = max(0.0, float(fit.ci_hi.max()))
    span = hi - lo or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def sx(value: float) -> float:
        return left + (value - lo) / (hi - lo) * (width - left - right_m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="24" font-family="sans-serif" font-size="14" '
        f'font-weight="bold">Fixed effects (95% CI)</text>',
        f'<line x1="{sx(0.0):.2f}" y1="{top - 8}" x2="{sx(0.0):.2f}" '
        f'y2="{height - bottom + 8}" stroke="#888888" stroke-dasharray="4 3"/>',
    ]
    csv_lines = ["term,coef,ci_low,ci_high,excludes_zero"]
    for j, name in enumerate(fit.columns):
        y = top + row_h * j + row_h / 2
        x_lo, x_hi, x_mid = sx(float(fit.ci_lo[j])), sx(float(fit.ci_hi[j])), sx(float(fit.beta[j]))
        excludes = fit.ci_lo[j] > 0.0 or fit.ci_hi[j] < 0.0
        color = "#1f4e8c" if excludes else "#555555"
        parts.append(f'<text x="8" y="{y + 4:.2f}" font-family="sans-serif" '
                     f'font-size="12">{_xml_escape(name)}</text>')
        parts.append(f'<line x1="{x_lo:.2f}" y1="{y:.2f}" x2="{x_hi:.2f}" '
                     f'y2="{y:.2f}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<circle cx="{x_mid:.2f}" cy="{y:.2f}" r="4" fill="{color}"/>')
        csv_lines.append('"%s",%s,%s,%s,%s' % (
            name.replace('"', '""'), repr(float(fit.beta[j])),
            repr(float(fit.ci_lo[j])), repr(float(fit.ci_hi[j])),
            "true" if excludes else "false"))
    parts.append("</svg>")
    Path(svg_path).write_text("\n".join(parts) + "\n", encoding="utf-8")
    Path(csv_path).write_text("\n".join(csv_lines) + "\n", encoding="utf-8")


def _xml_escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))
