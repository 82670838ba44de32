//! Assignment policies and the searches that learn them.

pub mod search;
pub mod tree;

pub use search::{
    exhaustive_search, two_step_search, PairOutcome, SearchResult, TwoStepResult,
    DEFAULT_MIN_LEAF, START_PAIRS,
};
pub use tree::{
    policy_from_json, render_dot, render_text, tree_from_json, tree_to_json, AssignmentPolicy,
    DecisionTree, Node, Shares,
};
