//! Cross-module invariants checked on random inputs.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use triarm::policy::Node;
use triarm::welfare::{build_welfare, OutcomeOptions, WelfareParams};
use triarm::{
    mechanism_report, panel_itt, subgroup_effects, Arm, AssignmentPolicy, Choice, DecisionTree,
    Household, PanelObservation, Quantity, RctDataset,
};

fn dataset(rows: Vec<(f64, u8, bool, f64)>) -> RctDataset {
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, (x, arm, took, y))| {
            let d = [Arm::NT, Arm::T, Arm::O][arm as usize];
            let z = match d {
                Arm::NT => Choice::NT,
                Arm::T => Choice::T,
                Arm::O => {
                    if took {
                        Choice::T
                    } else {
                        Choice::NT
                    }
                }
            };
            Household {
                id: (i + 1).to_string(),
                x: vec![x],
                d,
                z,
                y_treat: 300.0 + y,
                y_base: 300.0,
            }
        })
        .collect();
    RctDataset::new(vec!["x1".into()], rows).unwrap()
}

// every arm present at least twice, both choices present within O
fn rows_strategy() -> impl Strategy<Value = Vec<(f64, u8, bool, f64)>> {
    let base = vec![
        (0.1, 0, false, 1.0),
        (0.9, 0, false, -2.0),
        (0.2, 1, true, 3.0),
        (0.8, 1, true, -1.0),
        (0.3, 2, true, 2.0),
        (0.7, 2, false, 0.5),
    ];
    prop::collection::vec((0.0..1.0f64, 0u8..3, any::<bool>(), -50.0..50.0f64), 0..60).prop_map(
        move |mut extra| {
            extra.extend(base.iter().copied());
            extra
        },
    )
}

fn est(q: &Quantity) -> f64 {
    q.estimate().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn late_identities(rows in rows_strategy()) {
        let ds = dataset(rows);
        let w = build_welfare(&ds, &WelfareParams::default(), OutcomeOptions::default());
        let e = subgroup_effects(&ds, &w, |_| true, "all").unwrap();
        let q = est(&e.takeup);
        let scale = 1.0 + w.w.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if q > 0.0 {
            prop_assert!((est(&e.late_takers) * q - est(&e.itt)).abs() < 1e-9 * scale);
        } else {
            prop_assert_eq!(&e.late_takers, &Quantity::Undefined);
        }
        if q > 0.0 && q < 1.0 {
            let mix = q * est(&e.late_takers) + (1.0 - q) * est(&e.late_nontakers);
            prop_assert!((mix - est(&e.ate)).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn mechanism_report_ignores_row_order(rows in rows_strategy(), seed in any::<u64>(), thr in 0.2..0.8f64) {
        let ds = dataset(rows.clone());
        let mut shuffled = rows;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ds2 = dataset(shuffled);
        let policy = AssignmentPolicy::from_tree(DecisionTree {
            covariates: vec!["x1".into()],
            root: Node::split(0, thr, Node::Leaf(Arm::O), Node::Leaf(Arm::T)),
        });
        // demeaning and sample propensities are order-free too
        let opts = OutcomeOptions::default();
        let p = WelfareParams::default();
        let a = mechanism_report(&ds, &build_welfare(&ds, &p, opts), &policy).unwrap();
        let b = mechanism_report(&ds2, &build_welfare(&ds2, &p, opts), &policy).unwrap();
        for (ca, cb) in a.columns.iter().zip(&b.columns) {
            prop_assert_eq!(ca.n_rows, cb.n_rows);
            match (&ca.effects, &cb.effects) {
                (Some(ea), Some(eb)) => {
                    for (qa, qb) in [
                        (&ea.takeup, &eb.takeup),
                        (&ea.ate, &eb.ate),
                        (&ea.itt, &eb.itt),
                        (&ea.late_takers, &eb.late_takers),
                        (&ea.late_nontakers, &eb.late_nontakers),
                    ] {
                        match (qa, qb) {
                            (
                                Quantity::Defined { estimate: x, se: sx },
                                Quantity::Defined { estimate: y, se: sy },
                            ) => {
                                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
                                prop_assert!((sx - sy).abs() <= 1e-9 * (1.0 + sx.abs()));
                            }
                            (Quantity::Undefined, Quantity::Undefined) => {}
                            _ => prop_assert!(false, "definedness differs"),
                        }
                    }
                }
                (None, None) => {}
                _ => prop_assert!(false, "population differs"),
            }
        }
    }

    #[test]
    fn panel_itt_ignores_household_and_interval_levels(
        seed in any::<u64>(),
        shift_h in -5.0..5.0f64,
        shift_t in -5.0..5.0f64,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (households, intervals) = (15, 6);
        let mut base = Vec::new();
        for h in 0..households {
            let arm = [Arm::NT, Arm::T, Arm::O][h % 3];
            for t in 0..intervals {
                base.push(PanelObservation {
                    household: format!("h{h}"),
                    interval: format!("t{t}"),
                    log_y: rng.random_range(-1.0..1.0),
                    arm,
                    post: t >= intervals / 2,
                });
            }
        }
        let shifted: Vec<_> = base
            .iter()
            .map(|o| {
                let h: f64 = o.household[1..].parse().unwrap();
                let t: f64 = o.interval[1..].parse().unwrap();
                PanelObservation { log_y: o.log_y + shift_h * h.sin() + shift_t * t.cos(), ..o.clone() }
            })
            .collect();
        let a = panel_itt(&base).unwrap();
        let b = panel_itt(&shifted).unwrap();
        prop_assert!((a.tau_t - b.tau_t).abs() < 1e-9);
        prop_assert!((a.tau_o - b.tau_o).abs() < 1e-9);
        prop_assert!((a.se_t - b.se_t).abs() < 1e-9);
    }
}
