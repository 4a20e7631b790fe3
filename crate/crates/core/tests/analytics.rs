use nlmf_core::analytics::{
    corr_iid_scores, corr_iid_scores_derived, expectation_mc, jump_ratio_study, mc_correlation,
    mc_correlation_conditional, mc_cross_moment, mgp_cov_terms, mgp_cov_terms_derived, truncated_latent_moments,
    write_comparisons, Comparison, LoadingsSpec, PriorSpec,
};
use nlmf_core::priors::{CarPrior, CarSettings};

fn spec(h: usize, k: usize, phi: f64, loadings: LoadingsSpec) -> PriorSpec {
    PriorSpec { n_latent: h, n_atoms: k, phi, loadings }
}

#[test]
fn complementary_sets_sum_to_one() {
    let s = spec(3, 40, 1.0, LoadingsSpec::IidGamma { psi: 1.0 });
    let a = expectation_mc(&s, 0.3, 20_000, 7).unwrap();
    let b = expectation_mc(&s, 0.7, 20_000, 8).unwrap();
    let se = (a.se * a.se + b.se * b.se).sqrt();
    assert!((a.value + b.value - 1.0).abs() < 3.0 * se, "{a:?} {b:?}");
}

#[test]
fn cross_moment_matches_truncated_prior() {
    let m = truncated_latent_moments(1.5, 200, 0.4).unwrap();
    let est = mc_cross_moment(1.5, 200, 0.4, 40_000, 3).unwrap();
    assert!(est.z(m.cross).abs() < 3.0, "{est:?} vs {}", m.cross);
}

#[test]
fn iid_correlation_matches_simulation() {
    let m = truncated_latent_moments(1.0, 2000, 0.5).unwrap();
    let s = spec(4, 2000, 1.0, LoadingsSpec::IidGamma { psi: 1.0 });
    let est = mc_correlation_conditional(&s, 0.5, 400_000, 11).unwrap();
    let derived = corr_iid_scores_derived(4, 1.0, m.mean, m.var(), m.cov()).unwrap();
    assert!(est.z(derived).abs() < 3.0, "{est:?} vs {derived}");
    let as_written = corr_iid_scores(4, 1.0, m.mean, m.var(), m.cov()).unwrap();
    assert!(est.z(as_written).abs() > 10.0);
}

#[test]
fn joint_and_conditional_estimators_agree() {
    let s = spec(3, 100, 1.0, LoadingsSpec::IidGamma { psi: 2.0 });
    let a = mc_correlation(&s, 0.5, 20_000, 21).unwrap();
    let b = mc_correlation_conditional(&s, 0.5, 200_000, 22).unwrap();
    let se = (a.se * a.se + b.se * b.se).sqrt();
    assert!((a.value - b.value).abs() < 3.0 * se, "{a:?} {b:?}");
}

#[test]
fn mgp_correlation_matches_simulation_with_light_tails() {
    // Fourth moments exist here, so the standard error is trustworthy.
    let (a1, a2, nu) = (6.0, 6.0, 12.0);
    let m = truncated_latent_moments(2.0, 2000, 0.5).unwrap();
    let s = spec(4, 2000, 2.0, LoadingsSpec::Mgp { a1, a2, nu });
    let est = mc_correlation_conditional(&s, 0.5, 400_000, 31).unwrap();
    let derived = mgp_cov_terms_derived(a1, a2, nu, 4, &m).unwrap().corr();
    assert!(est.z(derived).abs() < 3.0, "{est:?} vs {derived}");
    let as_written = mgp_cov_terms(a1, a2, nu, 4, &m).unwrap().corr();
    assert!(est.z(as_written).abs() > 10.0);
}

#[test]
fn car_loadings_are_supported() {
    let w = CarPrior::adjacency_from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
    let prior = CarPrior::with_uniform_mean(w, CarSettings::default(), 2).unwrap();
    let s = spec(2, 50, 1.0, LoadingsSpec::Car { prior: prior.clone(), j: 0, l: 1 });
    let est = mc_correlation_conditional(&s, 0.5, 5_000, 41).unwrap();
    assert!(est.value > 0.0 && est.value < 1.0);
    assert!(spec(2, 50, 1.0, LoadingsSpec::Car { prior, j: 0, l: 0 }).validate().is_err());
}

#[test]
fn jump_ratio_concentrates_with_more_factors() {
    let hs = [1, 2, 4, 8, 16, 32];
    let iid = jump_ratio_study(&spec(1, 1, 1.0, LoadingsSpec::IidGamma { psi: 1.0 }), &hs, 20_000, 51).unwrap();
    for w in iid.windows(2) {
        assert!(w[1].var < w[0].var, "{w:?}");
    }
    assert!(iid[5].var_hi < iid[0].var_lo);
    for r in &iid {
        assert!(r.mean_lo < 0.0 && r.mean_hi > 0.0, "{r:?}");
    }
    let mgp = jump_ratio_study(&spec(1, 1, 1.0, LoadingsSpec::Mgp { a1: 2.5, a2: 3.0, nu: 6.0 }), &hs, 20_000, 52).unwrap();
    assert!(mgp[5].var_lo > iid[5].var_hi);
}

#[test]
fn streams_do_not_depend_on_thread_count() {
    let s = spec(2, 30, 1.0, LoadingsSpec::IidGamma { psi: 1.0 });
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| expectation_mc(&s, 0.4, 3_000, 9).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn comparison_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let rows = vec![Comparison::new("iid", 0.5, nlmf_core::analytics::Estimate { value: 0.52, se: 0.01 })];
    write_comparisons(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "experiment,formula,mc,se,z");
    let z: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((z - 2.0).abs() < 1e-9);
}
