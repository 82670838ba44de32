//! Learning welfare-maximizing assignment rules that mix compulsory
//! treatment, compulsory no-treatment and autonomous opt-in, from three-arm
//! randomized trial data.

pub mod data;
pub mod effects;
pub mod error;
pub mod panel;
pub mod policy;
pub mod stats;
pub mod synthetic;
pub mod testdata;
pub mod welfare;

pub use data::{load_csv, read_csv, sample_propensities, Arm, Choice, Household, Propensities, RctDataset};
pub use effects::{mechanism_report, subgroup_effects, take_up_rate, Quantity, SubgroupEffects};
pub use error::{Error, Result};
pub use panel::{load_panel_csv, panel_itt, PanelItt, PanelObservation};
pub use policy::{exhaustive_search, two_step_search, AssignmentPolicy, DecisionTree, Node};
pub use synthetic::{generate, oracle_assignment, true_policy_welfare, DgpSpec, OracleTruth};
pub use testdata::{corrected_estimate, fit_cond_means, make_test_data, CondMeanMethod, CorrectionConfig};
pub use welfare::{
    build_welfare, empirical_welfare, welfare_gain, OutcomeOptions, SignConvention,
    WelfareConfig, WelfareGain, WelfareOutcome, WelfareParams,
};
