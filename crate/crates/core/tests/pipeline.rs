use cfedit_core::batch::{load_dir, run_batch};
use cfedit_core::metrics::apd;
use cfedit_core::synthetic::{generate, write_suite, SyntheticConfig};
use cfedit_core::{baseline_exhaustive, run_counterfactual, Method, SearchConfig, Status};
use proptest::prelude::*;

#[test]
fn bundles_on_disk_give_the_same_results_as_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { seed: 31, count: 6, mask_density: Some(0.6), ..Default::default() };
    write_suite(&cfg, dir.path()).unwrap();
    let from_disk = run_batch(&load_dir(dir.path()).unwrap(), &SearchConfig::default()).unwrap();
    let in_memory = run_batch(&generate(&cfg).unwrap(), &SearchConfig::default()).unwrap();
    for (a, b) in from_disk.iter().zip(&in_memory) {
        assert_eq!(a.result.edits, b.result.edits);
        assert_eq!(a.regions, b.regions);
    }
}

#[test]
fn pruned_search_never_costs_more_on_planted_instances() {
    let cfg = SyntheticConfig { seed: 32, count: 40, planted: true, mask_density: Some(0.5), margin: (8.0, 12.0), ..Default::default() };
    for b in generate(&cfg).unwrap() {
        let w = run_counterfactual(&b, &SearchConfig::default()).unwrap();
        let e = baseline_exhaustive(&b, &SearchConfig::default()).unwrap();
        assert!(w.evaluations <= e.evaluations, "{}", b.id());
    }
}

#[test]
fn logit_scoring_runs_and_flips_planted_instances() {
    let cfg = SyntheticConfig { seed: 33, count: 10, planted: true, margin: (8.0, 12.0), ..Default::default() };
    let config = SearchConfig { score: cfedit_core::ScoreMode::Logit, ..SearchConfig::default() };
    for r in run_batch(&generate(&cfg).unwrap(), &config).unwrap() {
        assert_eq!(r.result.status, Status::Flipped);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn results_are_consistent(seed in 0u64..1000, method in prop::sample::select(Method::ALL.to_vec())) {
        let cfg = SyntheticConfig { seed, count: 1, mask_density: Some(0.7), margin: (2.0, 10.0), ..Default::default() };
        let bundle = generate(&cfg).unwrap().remove(0);
        let r = run_counterfactual(&bundle, &SearchConfig::default().with_method(method)).unwrap();
        prop_assert_eq!(r.trace.len(), r.edits.len() + 1);
        let mut seen = std::collections::HashSet::new();
        prop_assert!(r.edits.iter().all(|e| seen.insert(e.query_cell)));
        prop_assert!(r.edits.len() <= 16);
        if !r.edits.is_empty() {
            let n = r.edits.len() as f64;
            let telescoped = (r.trace[r.edits.len()] - r.trace[0]) / n;
            prop_assert!((apd(&r.trace).unwrap() - telescoped).abs() <= 1e-12);
        }
        let again = run_counterfactual(&bundle, &SearchConfig::default().with_method(method)).unwrap();
        prop_assert_eq!(&r.edits, &again.edits);
        prop_assert_eq!(r.evaluations, again.evaluations);
    }
}
