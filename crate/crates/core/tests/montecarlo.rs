//! Slower Monte Carlo checks against the simulator's ground truth.

use rayon::prelude::*;

use triarm::stats::derive_seed;
use triarm::testdata::{CondMeanMethod, CorrectionConfig};
use triarm::welfare::{build_welfare, OutcomeOptions};
use triarm::{
    corrected_estimate, generate, oracle_assignment, sample_propensities, subgroup_effects,
    welfare_gain, Arm, AssignmentPolicy, DgpSpec, OracleTruth, Quantity,
};

#[test]
fn roy_takers_gain_and_nontakers_lose() {
    let spec = DgpSpec::preset("roy").unwrap();
    let g = generate(&spec, 50_000, 17).unwrap();
    let truth = OracleTruth::new(&spec).unwrap();
    let w = build_welfare(&g.dataset, &spec.welfare.params().unwrap(), OutcomeOptions::default());
    let region = |x: &[f64]| oracle_assignment(&truth, x).unwrap() == Arm::O;
    let e = subgroup_effects(&g.dataset, &w, region, "G_O").unwrap();
    let (lt, lnt) = match (e.late_takers, e.late_nontakers) {
        (Quantity::Defined { estimate: a, se: sa }, Quantity::Defined { estimate: b, se: sb }) => {
            ((a, sa), (b, sb))
        }
        other => panic!("undefined LATE: {other:?}"),
    };
    assert!(lt.0 - 1.96 * lt.1 > 0.0, "takers {lt:?}");
    assert!(lnt.0 + 1.96 * lnt.1 < 0.0, "non-takers {lnt:?}");
}

#[test]
fn fixed_policy_correction_tracks_naive() {
    let spec = DgpSpec::preset("roy").unwrap();
    let policy = AssignmentPolicy::Uniform(Arm::T);
    let reference = AssignmentPolicy::Uniform(Arm::NT);
    let outcome = OutcomeOptions::default();
    let trials = 200;
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|i| {
            let g = generate(&spec, 1_000, derive_seed(99, i)).unwrap();
            let ds = &g.dataset;
            let params = spec.welfare.params().unwrap();
            let w = build_welfare(ds, &params, outcome);
            let props = sample_propensities(ds).unwrap();
            let naive = welfare_gain(&w, ds, &policy, &reference, &props).unwrap();
            let cfg = CorrectionConfig {
                params,
                outcome,
                method: CondMeanMethod::default(),
                n_reps: 20,
                seed: derive_seed(7, i),
            };
            let c = corrected_estimate(ds, &policy, Some(&reference), &cfg).unwrap();
            usize::from((c.estimate - naive.gain).abs() <= 2.0 * c.se)
        })
        .sum();
    let rate = hits as f64 / trials as f64;
    assert!(rate >= 0.95, "only {hits}/{trials} trials within 2 SE");
}
