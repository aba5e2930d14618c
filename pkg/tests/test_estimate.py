import json
import math
import warnings

import numpy as np
import pytest

from ctpanel.ctsem.batch import PENALTY, BatchObjective
from ctpanel.ctsem.estimate import (
    Effect,
    FitResult,
    StandardizedTable,
    aic,
    fit,
    format_effect,
    normalize_signs,
    panel_subjects,
    rank_links,
    read_fit,
    standardize,
    write_fit,
    write_links,
)
from ctpanel.ctsem.kalman import kalman_loglik
from ctpanel.ctsem.model import CtModelSpec, ParamLayout
from ctpanel.errors import ConfigError, DataError
from ctpanel.panel import BehaviorPanel, SliceRecord
from ctpanel.sim import simulate, spec_for_design

from simdata import CHANS, one_latent_design, small_design


@pytest.fixture(scope="module")
def panels():
    return simulate(small_design())


@pytest.fixture(scope="module")
def spec():
    return CtModelSpec(n_latent=2, predictor_channels=CHANS)


@pytest.fixture(scope="module")
def fitted(spec, panels):
    return fit(spec, panels, starts=2, seed=0)


# -- AIC ---------------------------------------------------------------------------------

def test_aic_examples():
    assert aic(-10.0, 3) == 26.0
    assert aic(0.0, 0) == 0.0
    assert aic(-456.74, 10) == pytest.approx(933.48)
    with pytest.raises(ValueError):
        aic(0.0, -1)


def test_fit_result_enforces_aic(fitted):
    assert fitted.aic == 2 * fitted.k - 2 * fitted.loglik
    with pytest.raises(ValueError):
        FitResult(fitted.spec, fitted.groups, fitted.theta, fitted.params, fitted.loglik, fitted.k,
                  fitted.aic + 1.0, True, {}, [])


# -- spec and layout -------------------------------------------------------------------------

def test_spec_defaults_and_validation():
    s = CtModelSpec()
    assert s.n_latent == 4 and s.n_manifest == 1 and len(s.predictor_channels) == 24
    assert s.latent_names == ("ind_KIA", "inter_KIA", "ind_intensify", "inter_intensify")
    for bad in (dict(n_latent=0), dict(predictor_channels=()), dict(grouping="mixed"),
                dict(predictor_channels=("nope",)), dict(drift_form="banded")):
        with pytest.raises(ConfigError):
            CtModelSpec(**bad)


def test_parameter_counts(spec):
    n, p = 2, len(CHANS)
    per_group = n + n * p + n + 1 + 1  # drift diag, effects, loadings, intercept, error var
    con = ParamLayout.build(spec, ["a", "b", "c"])
    free = ParamLayout.build(spec.with_grouping("free"), ["a", "b", "c"])
    assert con.n_params == per_group + 2 * n
    assert free.n_params == 3 * per_group


def test_pack_unpack_round_trip(spec):
    layout = ParamLayout.build(spec.with_grouping("free"), ["a", "b"])
    theta = np.random.default_rng(0).normal(size=layout.n_params)
    assert np.allclose(layout.pack(layout.unpack(theta)), theta, atol=1e-12)


# -- likelihood routes -----------------------------------------------------------------------

def test_batched_likelihood_matches_reference_filter(spec, panels):
    groups = [p.group_id for p in panels]
    layout = ParamLayout.build(spec.with_grouping("free"), groups)
    subjects, _ = panel_subjects(spec, panels)
    obj = BatchObjective(layout, subjects)
    rng = np.random.default_rng(4)
    for _ in range(3):
        theta = layout.pack({g: p for g, p in zip(groups, small_design().true_params)})
        theta = theta + rng.normal(size=len(theta)) * 0.1
        params = layout.unpack(theta)
        ref = sum(kalman_loglik(params[s.group], s).loglik for s in subjects)
        assert obj.loglik(theta) == pytest.approx(ref, rel=1e-10, abs=1e-8)


def test_total_loglik_invariant_to_order_and_relabeling(spec, panels):
    subjects, _ = panel_subjects(spec, panels)
    groups = [p.group_id for p in panels]
    layout = ParamLayout.build(spec, groups)
    theta = layout.pack({g: p for g, p in zip(groups, small_design().true_params)})
    base = BatchObjective(layout, subjects).loglik(theta)
    rev = BatchObjective(layout, subjects[::-1]).loglik(theta)
    assert rev == pytest.approx(base, rel=1e-12)

    rename = {"g1": "x2", "g2": "x1"}
    relabeled = [type(s)(s.times, s.predictors, s.manifest, rename[s.group], s.member) for s in subjects]
    layout2 = ParamLayout.build(spec, ["x2", "x1"])
    theta2 = layout2.pack({rename[g]: p for g, p in zip(groups, small_design().true_params)})
    assert BatchObjective(layout2, relabeled).loglik(theta2) == pytest.approx(base, rel=1e-12)


def test_unstable_full_drift_penalized(panels):
    spec = CtModelSpec(n_latent=2, predictor_channels=CHANS, drift_form="full")
    layout = ParamLayout.build(spec, [p.group_id for p in panels])
    subjects, _ = panel_subjects(spec, panels)
    params = dict(zip(layout.groups, small_design().true_params))
    # negative diagonal but a real eigenvalue of +0.35 from the off-diagonal coupling
    theta = layout.pack({g: _with_drift(p, [[-0.1, 2.0], [0.1, -0.1]]) for g, p in params.items()})
    f, g = BatchObjective(layout, subjects)(theta)
    assert f == PENALTY and not np.any(g)


def _with_drift(p, drift):
    q = p.copy()
    q.drift = np.asarray(drift, dtype=float)
    return q


# -- fitting --------------------------------------------------------------------------------

def test_fit_recovers_planted_structure(fitted):
    assert fitted.converged
    truth = small_design().true_params
    for g, tp in zip(fitted.groups, truth):
        assert np.all(np.sign(fitted.params[g].loadings) == np.sign(tp.loadings))


def test_constrained_shares_everything_but_loadings(fitted):
    a, b = (fitted.params[g] for g in fitted.groups)
    for attr in ("drift", "diffusion_chol", "predictor_effects", "manifest_intercept", "manifest_error_var", "cint"):
        assert np.array_equal(getattr(a, attr), getattr(b, attr))
    assert not np.array_equal(a.loadings, b.loadings)


def test_signs_normalized(fitted):
    total = sum(p.loadings.sum(axis=0) for p in fitted.params.values())
    assert np.all(total >= 0)


def test_normalize_signs_preserves_likelihood(spec, panels):
    groups = [p.group_id for p in panels]
    layout = ParamLayout.build(spec, groups)
    subjects, _ = panel_subjects(spec, panels)
    obj = BatchObjective(layout, subjects)
    params = dict(zip(groups, small_design().true_params))
    flipped = {g: _neg_first_latent(p) for g, p in params.items()}
    theta = layout.pack(flipped)
    normed = normalize_signs(layout, theta)
    assert obj.loglik(normed) == pytest.approx(obj.loglik(theta), rel=1e-12)
    assert np.allclose(normed, layout.pack(params))


def _neg_first_latent(p):
    q = p.copy()
    q.predictor_effects[0] *= -1
    q.loadings[:, 0] *= -1
    return q


def test_single_group_modes_coincide(spec):
    panels = simulate(small_design(n_groups=1, slices=60, seed=3))
    con = fit(spec, panels, starts=1, compute_se=False, standardized=False)
    free = fit(spec.with_grouping("free"), panels, starts=1, compute_se=False, standardized=False)
    assert con.loglik == pytest.approx(free.loglik, abs=1e-6)
    assert con.k == free.k


def test_standard_errors_present_and_positive(fitted):
    ses = list(fitted.std_errors.values())
    assert all(v is not None and v > 0 for v in ses)


def test_singular_hessian_gives_missing_errors(spec, panels):
    # a predictor that is zero everywhere leaves its effects unidentified
    zeroed = []
    for panel in panels:
        members = {}
        for m, recs in panel.members.items():
            members[m] = [_zero_channel(r, "joy") for r in recs]
        zeroed.append(BehaviorPanel(panel.group_id, members))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit(spec, zeroed, starts=1)
    assert all(v is None for v in res.std_errors.values())
    assert "joy" in res.standardized.flagged_channels
    assert all(e.estimate is None for e in res.standardized.predictor_effects if e.source == "joy")


def _zero_channel(rec, name):
    from ctpanel.panel import CHANNEL_INDEX
    vals = list(rec.values)
    vals[CHANNEL_INDEX[name]] = 0.0
    return SliceRecord(rec.slice_index, rec.start, rec.end, rec.time, tuple(vals), rec.curiosity)


def test_fit_is_deterministic(spec, panels, fitted):
    again = fit(spec, panels, starts=2, seed=0)
    assert np.array_equal(again.theta, fitted.theta)


def test_fit_rejects_short_series(spec):
    recs = [SliceRecord(0, 0, 10, 5, (0.0,) * 24, 1.0)]
    with pytest.raises(DataError):
        fit(spec, [BehaviorPanel("g", {"a": recs})])


# -- standardization and links ---------------------------------------------------------------

def test_standardized_formula(fitted, panels):
    table = standardize(fitted, panels)
    X = np.concatenate([p.series(m, CHANS)[1] for p in panels for m in p.members])
    y = np.concatenate([p.series(m, CHANS)[2] for p in panels for m in p.members])
    g = fitted.groups[0]
    par = fitted.params[g]
    lat_sd = np.sqrt(np.diag(par.stationary_cov()))
    e = next(e for e in table.predictor_effects if e.source == "joy" and e.target == "latent1")
    assert e.per_group[g] == pytest.approx(par.predictor_effects[1, 2] * X[:, 2].std() / lat_sd[1])
    lo = next(e for e in table.loadings if e.source == "latent0")
    vals = [fitted.params[h].loadings[0, 0] * np.sqrt(fitted.params[h].stationary_cov()[0, 0]) / y.std()
            for h in fitted.groups]
    assert lo.estimate == pytest.approx(np.mean(vals))
    assert lo.sd == pytest.approx(np.std(vals, ddof=1))


@pytest.fixture(scope="module")
def one_latent():
    spec = CtModelSpec(n_latent=1, predictor_channels=CHANS)
    panels = simulate(one_latent_design())
    return spec, panels, fit(spec, panels, starts=2, seed=0, compute_se=False)


def _scale_channel(panels, name, factor):
    from ctpanel.panel import CHANNEL_INDEX
    j = CHANNEL_INDEX[name]
    out = []
    for panel in panels:
        members = {}
        for m, recs in panel.members.items():
            members[m] = [SliceRecord(r.slice_index, r.start, r.end, r.time,
                                      tuple(factor * v if i == j else v for i, v in enumerate(r.values)),
                                      r.curiosity)
                          for r in recs]
        out.append(BehaviorPanel(panel.group_id, members))
    return out


def test_standardized_effect_invariant_to_predictor_scale(one_latent):
    spec, panels, base = one_latent
    refit = fit(spec, _scale_channel(panels, "sharing_findings", 2.0), starts=2, seed=0, compute_se=False)
    assert refit.loglik == pytest.approx(base.loglik, abs=1e-3)

    def eff(res):
        return next(e.estimate for e in res.standardized.predictor_effects if e.source == "sharing_findings")

    assert eff(refit) == pytest.approx(eff(base), rel=1e-3)
    raw = lambda res: res.params[res.groups[0]].predictor_effects[0, 0]
    assert raw(refit) == pytest.approx(raw(base) / 2, rel=1e-3)


def test_planted_dominant_effect_ranked_first(one_latent):
    _, _, res = one_latent
    report = rank_links(res.standardized, top_k=1)
    assert [(e.source, e.target) for e in report.edges if e.target == "latent0"] == [("sharing_findings", "latent0")]


def test_rank_links_single_and_ties():
    single = StandardizedTable([Effect("joy", "L", 0.4)], [])
    assert [(e.source, e.rank) for e in rank_links(single).edges] == [("joy", 1)]
    tied = StandardizedTable([Effect("zeta", "L", 0.5), Effect("alpha", "L", -0.5), Effect("mid", "L", 0.1)], [])
    report = rank_links(tied, top_k=2)
    assert [(e.source, e.rank) for e in report.edges] == [("alpha", 1), ("zeta", 2)]
    with pytest.raises(ValueError):
        rank_links(StandardizedTable([], []))


def test_format_effect():
    assert format_effect(Effect("inter_KIA", "curiosity", 2.612, 0.124)) == "inter_KIA → curiosity: 2.612 ± 0.124"


# -- persistence -------------------------------------------------------------------------------

def test_fit_file_round_trip(fitted, tmp_path):
    path = tmp_path / "fit.json"
    write_fit(fitted, path)
    back = read_fit(path)
    assert back.loglik == fitted.loglik and back.aic == fitted.aic and back.k == fitted.k
    assert np.array_equal(back.theta, fitted.theta)
    for g in fitted.groups:
        assert np.array_equal(back.params[g].loadings, fitted.params[g].loadings)
    data = json.loads(path.read_text())
    assert data["schema_version"] == "ctpanel/1"
    assert "identification" in data["metadata"]
    data["schema_version"] = "other/9"
    path.write_text(json.dumps(data))
    with pytest.raises(DataError):
        read_fit(path)


def test_links_csv(fitted, tmp_path):
    path = tmp_path / "links.csv"
    write_links(rank_links(fitted.standardized), path)
    rows = path.read_text().splitlines()
    assert rows[0] == "schema_version,source,target,standardized_estimate,sd,rank"
    assert all(r.startswith("ctpanel/1,") for r in rows[1:])


def test_spec_for_design_matches_truth_shape():
    d = small_design()
    s = spec_for_design(d)
    assert (s.n_latent, s.n_manifest, s.predictor_channels) == (2, 1, CHANS)
    assert not math.isnan(aic(-1.0, 1))
