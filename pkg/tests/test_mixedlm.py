"""Random-intercept REML: design building, the profiled fit against dense
linear-algebra and ANOVA oracles, and the emitted tables and plots."""
import math

import numpy as np
import pytest

from scicomm_drift.errors import ValidationError
from scicomm_drift.mixedlm import (
    CategoricalTerm, LmmFit, NumericTerm, POOLED_GROUP, RegressionSpec,
    build_design, emit_forest_plot, emit_regression_table, fit_design,
    fit_reml, pool_small_groups, profile_loglik,
)


# ---------------------------------------------------------------- oracles

def dense_profile(X, y, groups, lam):
    """Profiled REML pieces via the explicit n x n covariance matrix."""
    n, p = X.shape
    n_groups = int(groups.max()) + 1
    Z = np.zeros((n, n_groups))
    Z[np.arange(n), groups] = 1.0
    H = np.eye(n) + lam * Z @ Z.T
    Hinv = np.linalg.inv(H)
    XtHX = X.T @ Hinv @ X
    beta = np.linalg.solve(XtHX, X.T @ Hinv @ y)
    resid = y - X @ beta
    quad = float(resid @ Hinv @ resid)
    sigma2 = quad / (n - p)
    loglik = -0.5 * ((n - p) * (math.log(2 * math.pi) + 1.0 + math.log(sigma2))
                     + np.linalg.slogdet(H)[1] + np.linalg.slogdet(XtHX)[1])
    return loglik, beta, sigma2


def random_instance(rng, n_groups=6, group_size=7, p=3):
    n = n_groups * group_size
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    groups = np.repeat(np.arange(n_groups), group_size)
    beta = rng.normal(size=p)
    u = rng.normal(scale=0.8, size=n_groups)
    y = X @ beta + u[groups] + rng.normal(size=n)
    return X, y, groups


def anova_components(y, groups, n_groups, m):
    """Balanced one-way closed form: (sigma2_resid, sigma2_group)."""
    means = np.array([y[groups == g].mean() for g in range(n_groups)])
    grand = y.mean()
    ssw = sum(float(((y[groups == g] - means[g]) ** 2).sum()) for g in range(n_groups))
    ssb = m * float(((means - grand) ** 2).sum())
    msw = ssw / (n_groups * (m - 1))
    msb = ssb / (n_groups - 1)
    return msw, max(0.0, (msb - msw) / m)


# ----------------------------------------------------------------- design

ROWS = [
    {"ims_pred": 4.2, "field": "medicine", "paper_doi": "10.1/a", "followers": 10},
    {"ims_pred": 3.1, "field": "biology", "paper_doi": "10.1/a", "followers": 0},
    {"ims_pred": 2.8, "field": "other", "paper_doi": "10.1/b", "followers": 99},
    {"ims_pred": 4.9, "field": "medicine", "paper_doi": "10.1/b", "followers": 5},
]


def spec(terms, min_group_size=1):
    return RegressionSpec(response="ims_pred", terms=terms, group="paper_doi",
                          min_group_size=min_group_size)


def test_build_design_categorical_columns():
    design = build_design(ROWS, spec([CategoricalTerm("field", reference="other")]))
    assert design.columns == ["Intercept", "field: biology", "field: medicine"]
    assert design.X[:, 0].tolist() == [1.0, 1.0, 1.0, 1.0]
    assert design.X[:, 1].tolist() == [0.0, 1.0, 0.0, 0.0]
    assert design.X[:, 2].tolist() == [1.0, 0.0, 0.0, 1.0]
    assert design.group_names == ["10.1/a", "10.1/b"]
    assert design.groups.tolist() == [0, 0, 1, 1]


def test_build_design_numeric_transforms():
    design = build_design(ROWS, spec([NumericTerm("followers", transform="log1p")]))
    assert design.columns == ["Intercept", "log1p(followers)"]
    assert design.X[0, 1] == pytest.approx(math.log1p(10))
    with pytest.raises(ValidationError):
        build_design([{**ROWS[0], "followers": -3}],
                     spec([NumericTerm("followers", transform="log1p")]))
    with pytest.raises(ValidationError):
        build_design(ROWS, spec([NumericTerm("followers", transform="sqrt")]))


def test_build_design_errors_name_the_offender():
    with pytest.raises(ValidationError) as err:
        build_design(ROWS, spec([CategoricalTerm("field", reference="psychology")]))
    assert "psychology" in str(err.value)

    with pytest.raises(ValidationError) as err:
        build_design(ROWS, spec([CategoricalTerm("field", reference="other",
                                                 levels=["other", "medicine"])]))
    assert "biology" in str(err.value)

    rows = [dict(r) for r in ROWS]
    del rows[2]["followers"]
    with pytest.raises(ValidationError) as err:
        build_design(rows, spec([NumericTerm("followers")]))
    assert "followers" in str(err.value)


def test_build_design_rejects_collinear_columns():
    rows = [{**r, "dup": r["followers"]} for r in ROWS]
    with pytest.raises(ValidationError) as err:
        build_design(rows, spec([NumericTerm("followers"), NumericTerm("dup")]))
    assert "rank deficient" in str(err.value)


def test_build_design_rejects_nonnumeric_response():
    rows = [dict(ROWS[0]), dict(ROWS[1])]
    rows[0]["ims_pred"] = "high"
    with pytest.raises(ValidationError):
        build_design(rows, spec([]))


def test_pool_small_groups():
    groups = np.array([0, 0, 0, 1, 1, 2])
    pooled, names = pool_small_groups(groups, ["a", "b", "c"], min_group_size=3)
    assert names == ["a", POOLED_GROUP]
    assert pooled.tolist() == [0, 0, 0, 1, 1, 1]
    same, same_names = pool_small_groups(groups, ["a", "b", "c"], min_group_size=1)
    assert same_names == ["a", "b", "c"]
    assert same.tolist() == groups.tolist()


# ------------------------------------------------------------------- fit

def test_profile_matches_dense_oracle():
    rng = np.random.default_rng(301)
    for trial in range(8):
        X, y, groups = random_instance(rng)
        for lam in (0.0, 0.05, 1.0, 7.3):
            ln_lam = None if lam == 0.0 else math.log(lam)
            got = profile_loglik(X, y, groups, ln_lam)
            want = dense_profile(X, y, groups, lam)[0]
            assert got == pytest.approx(want, abs=1e-8)


def test_fit_reml_beta_matches_dense_gls_at_chosen_lambda():
    rng = np.random.default_rng(302)
    X, y, groups = random_instance(rng, n_groups=8, group_size=9)
    fit = fit_reml(X, y, groups)
    _, beta, sigma2 = dense_profile(X, y, groups, fit.lam)
    assert fit.beta == pytest.approx(beta, abs=1e-8)
    assert fit.sigma2_resid == pytest.approx(sigma2, abs=1e-8)


def test_fit_reml_finds_the_grid_optimum():
    rng = np.random.default_rng(303)
    for trial in range(4):
        X, y, groups = random_instance(rng)
        fit = fit_reml(X, y, groups)
        best = max(profile_loglik(X, y, groups, ln) for ln in
                   [None] + list(np.linspace(-12, 12, 97)))
        assert fit.reml_loglik >= best - 1e-6


@pytest.mark.parametrize("n_groups,m", [(5, 4), (20, 30)])
def test_fit_reml_matches_balanced_anova(n_groups, m):
    rng = np.random.default_rng(40 + n_groups)
    groups = np.repeat(np.arange(n_groups), m)
    y = 2.0 + rng.normal(scale=1.1, size=n_groups)[groups] + rng.normal(size=n_groups * m)
    X = np.ones((n_groups * m, 1))
    fit = fit_reml(X, y, groups)
    msw, sg2 = anova_components(y, groups, n_groups, m)
    assert fit.beta[0] == pytest.approx(float(y.mean()), abs=1e-8)
    assert fit.sigma2_resid == pytest.approx(msw, abs=1e-6)
    assert fit.sigma2_group == pytest.approx(sg2, abs=1e-6)


def test_fit_reml_zero_variance_boundary():
    # every group is an identical copy, so between-group variance is exactly 0
    rng = np.random.default_rng(304)
    m, n_groups = 12, 9
    x_block = rng.normal(size=m)
    e_block = rng.normal(size=m)
    X = np.column_stack([np.ones(m * n_groups), np.tile(x_block, n_groups)])
    y = 1.5 + 0.7 * X[:, 1] + np.tile(e_block, n_groups)
    groups = np.repeat(np.arange(n_groups), m)
    fit = fit_reml(X, y, groups)
    assert fit.lam <= 1e-6
    assert fit.sigma2_group <= 1e-6
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    assert fit.beta == pytest.approx(ols, abs=1e-8)


def test_fit_reml_inference_fields():
    rng = np.random.default_rng(305)
    X, y, groups = random_instance(rng)
    fit = fit_reml(X, y, groups)
    assert np.all(fit.se > 0)
    assert fit.z == pytest.approx(fit.beta / fit.se)
    for j in range(len(fit.beta)):
        expected_p = math.erfc(abs(fit.z[j]) / math.sqrt(2))
        assert fit.p_values[j] == pytest.approx(expected_p, abs=1e-12)
    assert fit.ci_lo == pytest.approx(fit.beta - 1.96 * fit.se)
    assert fit.ci_hi == pytest.approx(fit.beta + 1.96 * fit.se)
    assert fit.n_obs == len(y)
    assert (fit.min_group_size, fit.max_group_size) == (7, 7)


def test_fit_reml_validation():
    X = np.ones((4, 1))
    with pytest.raises(ValidationError):
        fit_reml(X, np.ones(3), np.zeros(4, dtype=int))
    with pytest.raises(ValidationError):
        fit_reml(X, np.ones(4), np.array([0, 0, -1, 0]))
    with pytest.raises(ValidationError):  # p >= n
        fit_reml(np.ones((2, 2)), np.ones(2), np.array([0, 1]))


def test_fit_design_pools_then_fits():
    rng = np.random.default_rng(306)
    rows = []
    for g in range(12):
        doi = f"10.1/{g}"
        for j in range(3 if g < 10 else 40):
            rows.append({"ims_pred": float(rng.normal(loc=3.0)),
                         "field": "medicine" if g % 2 else "other",
                         "paper_doi": doi})
    design = build_design(rows, spec([CategoricalTerm("field", reference="other")],
                                     min_group_size=31))
    fit = fit_design(design, spec([CategoricalTerm("field", reference="other")],
                                  min_group_size=31))
    assert fit.columns == ["Intercept", "field: medicine"]
    # ten tiny groups pool into one, leaving 2 kept + 1 pooled
    assert fit.n_groups == 3


# ------------------------------------------------------------- rendering

def hand_fit():
    return LmmFit(
        columns=["Intercept", "field: medicine"],
        beta=np.array([3.25, -0.5]), se=np.array([0.1, 0.3]),
        z=np.array([32.5, -1.6666666666666667]),
        p_values=np.array([0.0, 0.09558070454562939]),
        ci_lo=np.array([3.054, -1.088]), ci_hi=np.array([3.446, 0.088]),
        sigma2_resid=0.8125, sigma2_group=0.2031, lam=0.25,
        reml_loglik=-101.2345, converged=True, n_obs=418, n_groups=12,
        group_sizes=(3, 62, 34.8333))


def test_regression_table_text_golden():
    table = emit_regression_table(hand_fit(), "text")
    expected = "\n".join([
        "                 Mixed Linear Model Regression Results                 ",
        "=======================================================================",
        "No. Observations:   418         Scale:          0.8125",
        "No. Groups:         12          Log-Likelihood: -101.2345",
        "Min. group size:    3           Converged:      Yes",
        "Max. group size:    62          ",
        "Mean group size:    34.8        ",
        "-----------------------------------------------------------------------",
        "                     Coef. Std.Err.        z    P>|z|   [0.025   0.975]",
        "-----------------------------------------------------------------------",
        "Intercept            3.250    0.100   32.500    0.000    3.054    3.446",
        "field: medicine     -0.500    0.300   -1.667    0.096   -1.088    0.088",
        "Group Var            0.203",
        "=======================================================================",
    ]) + "\n"
    assert table == expected


def test_regression_table_csv_parses_back_exactly():
    fit = hand_fit()
    csv = emit_regression_table(fit, "csv")
    lines = csv.strip().splitlines()
    assert lines[0] == "term,coef,std_err,z,p_value,ci_low,ci_high"
    cells = lines[1].split(",")
    assert cells[0] == '"Intercept"'
    assert float(cells[1]) == fit.beta[0]
    assert float(cells[3]) == fit.z[0]
    assert lines[-1].startswith('"Group Var",0.2031')
    with pytest.raises(ValidationError):
        emit_regression_table(fit, "markdown")
    with pytest.raises(ValidationError):
        emit_regression_table(fit_reml(np.ones((6, 1)), np.arange(6.0),
                                       np.array([0, 0, 0, 1, 1, 1])), "text")


def test_forest_plot_outputs(tmp_path):
    svg_path = tmp_path / "forest.svg"
    csv_path = tmp_path / "forest.csv"
    emit_forest_plot(hand_fit(), svg_path, csv_path)
    svg = svg_path.read_text(encoding="utf-8")
    assert svg.startswith("<svg")
    assert 'stroke-dasharray="4 3"' in svg           # zero line
    assert svg.count("<circle") == 2
    assert "#1f4e8c" in svg and "#555555" in svg     # significant vs not
    csv = csv_path.read_text(encoding="utf-8").splitlines()
    assert csv[0] == "term,coef,ci_low,ci_high,excludes_zero"
    assert csv[1].endswith("true")
    assert csv[2].endswith("false")

    emit_forest_plot(hand_fit(), tmp_path / "b.svg", tmp_path / "b.csv")
    assert (tmp_path / "b.svg").read_bytes() == svg_path.read_bytes()
