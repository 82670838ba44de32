//! Exact depth-limited tree search over IPW welfare scores, and the two-step
//! depth-6 refinement built on top of it.
//!
//! The objective at a node is additive over its leaves: a leaf labelled `j`
//! contributes the sum of the arm-`j` scores of the rows it holds. The search
//! enumerates every split `(covariate, threshold)` at every node, with
//! thresholds at midpoints between consecutive distinct observed values, and
//! keeps the best subtree per child. A split is admissible only if both
//! children receive at least `min_leaf` rows; "no split" (a leaf) is always
//! admissible, so the optimum ranges over all trees of depth at most `depth`.
//!
//! Ties (within a tolerance scaled to the score magnitudes) are broken toward
//! shallower trees, then lower covariate index, then smaller threshold, then
//! arm order `NT < T < O`.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Arm, Propensities, RctDataset};
use crate::error::{Error, Result};
use crate::policy::tree::{AssignmentPolicy, DecisionTree, Node};
use crate::welfare::{empirical_welfare, ipw_scores, WelfareOutcome};

pub const DEFAULT_MIN_LEAF: usize = 5;
/// Deepest tree the exact search accepts.
pub const MAX_EXACT_DEPTH: usize = 3;

/// Relative tie tolerance against the total absolute score mass.
const TIE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub policy: AssignmentPolicy,
    pub tree: DecisionTree,
    /// Empirical welfare of `policy` on the training data.
    pub welfare: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairOutcome {
    pub pair: (Arm, Arm),
    pub step1_welfare: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepResult {
    pub policy: AssignmentPolicy,
    pub tree: DecisionTree,
    pub welfare: f64,
    /// Arms of the first step of the winning run.
    pub start_pair: (Arm, Arm),
    /// One entry per starting pair, in the order tried.
    pub pairs: Vec<PairOutcome>,
}

/// Starting pairs tried by [`two_step_search`], in order.
pub const START_PAIRS: [(Arm, Arm); 3] = [(Arm::T, Arm::NT), (Arm::NT, Arm::O), (Arm::T, Arm::O)];

/// Score table and presorted covariate orders shared by every node.
struct Problem {
    scores: Vec<[f64; 3]>,
    /// Covariates, column-major: `x[k][i]`.
    x: Vec<Vec<f64>>,
    /// Global order of rows by each covariate.
    order: Vec<Vec<u32>>,
    /// Threshold that separates row `i`'s value of covariate `k` from the next
    /// larger observed value (NaN at the column maximum).
    next_mid: Vec<Vec<f64>>,
    min_leaf: usize,
    tol: f64,
}

impl Problem {
    fn new(w: &WelfareOutcome, ds: &RctDataset, props: &Propensities, min_leaf: usize) -> Self {
        let scores = ipw_scores(&w.w, &ds.arms(), props);
        let n = ds.len();
        let x: Vec<Vec<f64>> = (0..ds.dim()).map(|k| ds.column(k)).collect();
        let mut order = Vec::with_capacity(x.len());
        let mut next_mid = Vec::with_capacity(x.len());
        for col in &x {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            let mut mids = vec![f64::NAN; n];
            let mut start = 0;
            while start < n {
                let v = col[idx[start] as usize];
                let mut end = start;
                while end < n && col[idx[end] as usize] == v {
                    end += 1;
                }
                let mid = if end < n {
                    midpoint(v, col[idx[end] as usize])
                } else {
                    f64::NAN
                };
                for &i in &idx[start..end] {
                    mids[i as usize] = mid;
                }
                start = end;
            }
            order.push(idx);
            next_mid.push(mids);
        }
        let mass: f64 = scores.iter().flat_map(|s| s.iter()).map(|v| v.abs()).sum();
        Problem {
            scores,
            x,
            order,
            next_mid,
            min_leaf: min_leaf.max(1),
            tol: TIE_REL_TOL * mass.max(f64::MIN_POSITIVE),
        }
    }

    fn dim(&self) -> usize {
        self.x.len()
    }

    /// Per-covariate sorted row lists for a subset given as a membership mask.
    fn subset(&self, member: &[bool]) -> Subset {
        Subset {
            sorted: self
                .order
                .iter()
                .map(|o| o.iter().copied().filter(|&i| member[i as usize]).collect())
                .collect(),
        }
    }

    fn full(&self) -> Subset {
        Subset {
            sorted: self.order.clone(),
        }
    }
}

/// Midpoint strictly above `lo` and at most `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

#[derive(Clone)]
struct Subset {
    sorted: Vec<Vec<u32>>,
}

impl Subset {
    fn len(&self) -> usize {
        self.sorted.first().map_or(0, Vec::len)
    }

    fn rows(&self) -> &[u32] {
        &self.sorted[0]
    }

    /// Splits into rows below the threshold of covariate `k` at sorted
    /// position `pos` (false branch) and the rest (true branch).
    fn split(&self, p: &Problem, k: usize, pos: usize, n_total: usize) -> (Subset, Subset) {
        let mut upper = vec![false; n_total];
        for &i in &self.sorted[k][pos..] {
            upper[i as usize] = true;
        }
        let mut lo = Vec::with_capacity(p.dim());
        let mut hi = Vec::with_capacity(p.dim());
        for list in &self.sorted {
            let (h, l): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&i| upper[i as usize]);
            lo.push(l);
            hi.push(h);
        }
        (Subset { sorted: lo }, Subset { sorted: hi })
    }
}

#[derive(Clone, Copy)]
struct Arms {
    list: [Arm; 3],
    len: usize,
    /// Arm tried first among leaves, so it wins within-tolerance ties.
    preferred: Option<Arm>,
}

impl Arms {
    fn new(arms: &[Arm], preferred: Option<Arm>) -> Self {
        let mut sorted = arms.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut list = [Arm::NT; 3];
        list[..sorted.len()].copy_from_slice(&sorted);
        Arms {
            list,
            len: sorted.len(),
            preferred,
        }
    }

    fn iter(&self) -> impl Iterator<Item = Arm> + '_ {
        self.preferred
            .into_iter()
            .chain(self.list[..self.len].iter().copied().filter(move |a| Some(*a) != self.preferred))
    }

    fn best(&self, sums: &[f64; 3], tol: f64) -> (Arm, f64) {
        let mut it = self.iter();
        let first = it.next().expect("at least one arm");
        let mut best = (first, sums[first.index()]);
        for a in it {
            if sums[a.index()] > best.1 + tol {
                best = (a, sums[a.index()]);
            }
        }
        best
    }
}

#[derive(Clone)]
struct Candidate {
    value: f64,
    depth: usize,
    node: Node,
}

impl Candidate {
    fn beats(&self, other: &Candidate, tol: f64) -> bool {
        self.value > other.value + tol
            || (self.value >= other.value - tol && self.depth < other.depth)
    }
}

fn leaf(p: &Problem, rows: &[u32], arms: &Arms) -> Candidate {
    let mut sums = [0.0; 3];
    for &i in rows {
        let s = &p.scores[i as usize];
        for j in 0..3 {
            sums[j] += s[j];
        }
    }
    let (arm, value) = arms.best(&sums, p.tol);
    Candidate {
        value,
        depth: 0,
        node: Node::Leaf(arm),
    }
}

/// Admissible split positions along covariate `k`: sorted positions where the
/// value strictly increases and both sides keep `min_leaf` rows.
fn split_positions<'a>(p: &'a Problem, sub: &'a Subset, k: usize) -> impl Iterator<Item = usize> + 'a {
    let list = &sub.sorted[k];
    let col = &p.x[k];
    let n = list.len();
    let lo = p.min_leaf.max(1);
    let hi = n.saturating_sub(p.min_leaf);
    (lo..=hi).filter(move |&pos| pos < n && col[list[pos - 1] as usize] < col[list[pos] as usize])
}

fn threshold_at(p: &Problem, sub: &Subset, k: usize, pos: usize) -> f64 {
    p.next_mid[k][sub.sorted[k][pos - 1] as usize]
}

/// Best depth-one tree by a single sweep per covariate.
fn best_depth1(p: &Problem, sub: &Subset, arms: &Arms) -> Candidate {
    let all = sub.rows();
    let mut best = leaf(p, all, arms);
    if sub.len() < 2 * p.min_leaf {
        return best;
    }
    let mut total = [0.0; 3];
    for &i in all {
        let s = &p.scores[i as usize];
        for j in 0..3 {
            total[j] += s[j];
        }
    }
    for k in 0..p.dim() {
        let list = &sub.sorted[k];
        let col = &p.x[k];
        let n = list.len();
        let mut prefix = [0.0; 3];
        for pos in 1..n {
            let s = &p.scores[list[pos - 1] as usize];
            for j in 0..3 {
                prefix[j] += s[j];
            }
            if pos < p.min_leaf || n - pos < p.min_leaf {
                continue;
            }
            if col[list[pos - 1] as usize] >= col[list[pos] as usize] {
                continue;
            }
            let rest = [total[0] - prefix[0], total[1] - prefix[1], total[2] - prefix[2]];
            let (a_lo, v_lo) = arms.best(&prefix, p.tol);
            let (a_hi, v_hi) = arms.best(&rest, p.tol);
            let cand_value = v_lo + v_hi;
            // cheap pre-check before building the node
            let probe = Candidate {
                value: cand_value,
                depth: 1,
                node: Node::Leaf(Arm::NT),
            };
            if probe.beats(&best, p.tol) {
                best = Candidate {
                    value: cand_value,
                    depth: 1,
                    node: Node::split(
                        k,
                        threshold_at(p, sub, k, pos),
                        Node::Leaf(a_hi),
                        Node::Leaf(a_lo),
                    ),
                };
            }
        }
    }
    best
}

fn split_candidate(
    p: &Problem,
    sub: &Subset,
    k: usize,
    pos: usize,
    depth: usize,
    arms: &Arms,
) -> Candidate {
    let n_total = p.scores.len();
    let (lo, hi) = sub.split(p, k, pos, n_total);
    let c_hi = best_tree(p, &hi, depth - 1, arms, false);
    let c_lo = best_tree(p, &lo, depth - 1, arms, false);
    Candidate {
        value: c_hi.value + c_lo.value,
        depth: 1 + c_hi.depth.max(c_lo.depth),
        node: Node::split(k, threshold_at(p, sub, k, pos), c_hi.node, c_lo.node),
    }
}

fn best_tree(p: &Problem, sub: &Subset, depth: usize, arms: &Arms, parallel: bool) -> Candidate {
    if depth == 0 || sub.len() < 2 * p.min_leaf {
        return leaf(p, sub.rows(), arms);
    }
    if depth == 1 {
        return best_depth1(p, sub, arms);
    }
    let mut best = leaf(p, sub.rows(), arms);
    let splits: Vec<(usize, usize)> = (0..p.dim())
        .flat_map(|k| split_positions(p, sub, k).map(move |pos| (k, pos)))
        .collect();
    let candidates: Vec<Candidate> = if parallel {
        splits
            .par_iter()
            .map(|&(k, pos)| split_candidate(p, sub, k, pos, depth, arms))
            .collect()
    } else {
        splits
            .iter()
            .map(|&(k, pos)| split_candidate(p, sub, k, pos, depth, arms))
            .collect()
    };
    // reduction in enumeration order keeps the result thread-count independent
    for c in candidates {
        if c.beats(&best, p.tol) {
            best = c;
        }
    }
    best
}

fn validate_arms(arms: &[Arm], props: &Propensities) -> Result<()> {
    let mut distinct = arms.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "search needs at least two distinct arms".into(),
        ));
    }
    for &a in &distinct {
        props.require(a)?;
    }
    Ok(())
}

fn check_inputs(w: &WelfareOutcome, ds: &RctDataset) -> Result<()> {
    if w.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "welfare vector has {} entries for {} rows",
            w.len(),
            ds.len()
        )));
    }
    Ok(())
}

/// Exact welfare-maximizing tree of depth at most `depth` (1 to 3) whose
/// leaves use only `arms`.
pub fn exhaustive_search(
    w: &WelfareOutcome,
    ds: &RctDataset,
    props: &Propensities,
    arms: &[Arm],
    depth: usize,
    min_leaf: usize,
) -> Result<SearchResult> {
    check_inputs(w, ds)?;
    if !(1..=MAX_EXACT_DEPTH).contains(&depth) {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search depth must be in 1..={MAX_EXACT_DEPTH}, got {depth}"
        )));
    }
    validate_arms(arms, props)?;
    let p = Problem::new(w, ds, props, min_leaf);
    let best = best_tree(&p, &p.full(), depth, &Arms::new(arms, None), true);
    finish(w, ds, props, best.node)
}

fn finish(
    w: &WelfareOutcome,
    ds: &RctDataset,
    props: &Propensities,
    root: Node,
) -> Result<SearchResult> {
    let tree = DecisionTree::new(ds.schema().to_vec(), root)?;
    let policy = AssignmentPolicy::from_tree(tree.clone());
    let welfare = empirical_welfare(w, ds, &policy, props)?;
    Ok(SearchResult {
        policy,
        tree,
        welfare,
    })
}

/// Two-step heuristic: an exact depth-`depth_per_step` tree over a pair of
/// arms, then within every leaf an exact subtree over that leaf's arm and the
/// excluded arm. All three starting pairs are tried; the highest-welfare
/// concatenated tree wins (earlier pair on ties).
pub fn two_step_search(
    w: &WelfareOutcome,
    ds: &RctDataset,
    props: &Propensities,
    depth_per_step: usize,
    min_leaf: usize,
) -> Result<TwoStepResult> {
    check_inputs(w, ds)?;
    if !(1..=MAX_EXACT_DEPTH).contains(&depth_per_step) {
        return Err(Error::InvalidArgument(format!(
            "per-step depth must be in 1..={MAX_EXACT_DEPTH}, got {depth_per_step}"
        )));
    }
    for arm in Arm::ALL {
        props.require(arm)?;
    }
    let p = Problem::new(w, ds, props, min_leaf);
    let mut pairs = Vec::with_capacity(3);
    let mut winner: Option<(SearchResult, (Arm, Arm))> = None;
    for pair in START_PAIRS {
        let step1 = best_tree(&p, &p.full(), depth_per_step, &Arms::new(&[pair.0, pair.1], None), true);
        let step1 = finish(w, ds, props, step1.node)?;
        let excluded = Arm::ALL
            .into_iter()
            .find(|a| *a != pair.0 && *a != pair.1)
            .expect("three arms");
        let all: Vec<u32> = (0..ds.len() as u32).collect();
        let refined = refine(&p, &step1.tree.root, &all, excluded, depth_per_step);
        let result = finish(w, ds, props, refined)?;
        pairs.push(PairOutcome {
            pair,
            step1_welfare: step1.welfare,
            welfare: result.welfare,
        });
        if winner.as_ref().is_none_or(|(best, _)| result.welfare > best.welfare) {
            winner = Some((result, pair));
        }
    }
    let (best, start_pair) = winner.expect("three starting pairs");
    Ok(TwoStepResult {
        policy: best.policy,
        tree: best.tree,
        welfare: best.welfare,
        start_pair,
        pairs,
    })
}

/// Replaces each leaf of `node` by the best subtree over the leaf's rows with
/// arms {leaf arm, `excluded`}; the leaf's own arm wins ties.
fn refine(p: &Problem, node: &Node, rows: &[u32], excluded: Arm, depth: usize) -> Node {
    match node {
        Node::Leaf(arm) => {
            if rows.len() < p.min_leaf {
                return Node::Leaf(*arm);
            }
            let mut member = vec![false; p.scores.len()];
            for &i in rows {
                member[i as usize] = true;
            }
            let sub = p.subset(&member);
            let arms = Arms::new(&[*arm, excluded], Some(*arm));
            best_tree(p, &sub, depth, &arms, true).node
        }
        Node::Split {
            var,
            threshold,
            true_branch,
            false_branch,
        } => {
            let (hi, lo): (Vec<u32>, Vec<u32>) = rows
                .iter()
                .partition(|&&i| p.x[*var][i as usize] >= *threshold);
            Node::split(
                *var,
                *threshold,
                refine(p, true_branch, &hi, excluded, depth),
                refine(p, false_branch, &lo, excluded, depth),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_propensities, Choice, Household};
    use crate::policy::tree::AssignmentPolicy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(seed: u64, n: usize, k: usize, levels: u32) -> (RctDataset, WelfareOutcome) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for i in 0..n {
            let d = Arm::ALL[i % 3];
            let z = match d {
                Arm::NT => Choice::NT,
                Arm::T => Choice::T,
                Arm::O => {
                    if rng.random_bool(0.5) {
                        Choice::T
                    } else {
                        Choice::NT
                    }
                }
            };
            let x = (0..k)
                .map(|_| (rng.random_range(0..levels)) as f64 / levels as f64)
                .collect();
            rows.push(Household {
                id: i.to_string(),
                x,
                d,
                z,
                y_treat: 1.0,
                y_base: 1.0,
            });
            w.push(rng.random_range(-1.0..1.0));
        }
        let ds = RctDataset::new((0..k).map(|j| format!("x{j}")).collect(), rows).unwrap();
        (
            ds,
            WelfareOutcome {
                w,
                demeaned: false,
                baseline_differenced: false,
            },
        )
    }

    #[test]
    fn dominant_arm_gives_uniform_policy() {
        let (ds, _) = random_instance(1, 60, 2, 7);
        let props = sample_propensities(&ds).unwrap();
        // arm-T rows carry large positive welfare, everyone else zero
        let w = WelfareOutcome {
            w: ds.rows().iter().map(|r| if r.d == Arm::T { 5.0 } else { 0.0 }).collect(),
            demeaned: false,
            baseline_differenced: false,
        };
        let res = exhaustive_search(&w, &ds, &props, &Arm::ALL, 2, 5).unwrap();
        assert_eq!(res.policy, AssignmentPolicy::Uniform(Arm::T));
        let uniform =
            empirical_welfare(&w, &ds, &AssignmentPolicy::Uniform(Arm::T), &props).unwrap();
        assert_eq!(res.welfare, uniform);
    }

    #[test]
    fn reported_welfare_matches_evaluation() {
        let (ds, w) = random_instance(2, 90, 2, 9);
        let props = sample_propensities(&ds).unwrap();
        for depth in 1..=3 {
            let res = exhaustive_search(&w, &ds, &props, &Arm::ALL, depth, 5).unwrap();
            let again = empirical_welfare(&w, &ds, &res.policy, &props).unwrap();
            assert!((res.welfare - again).abs() < 1e-9);
            assert!(res.tree.depth() <= depth);
        }
    }

    #[test]
    fn deeper_search_never_worse() {
        let (ds, w) = random_instance(3, 80, 2, 8);
        let props = sample_propensities(&ds).unwrap();
        let mut last = f64::NEG_INFINITY;
        for depth in 1..=3 {
            let v = exhaustive_search(&w, &ds, &props, &Arm::ALL, depth, 5).unwrap().welfare;
            assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn relabelling_arms_mirrors_two_arm_tree() {
        let (ds, w) = random_instance(4, 60, 2, 6);
        let props = sample_propensities(&ds).unwrap();
        let swap = |a: Arm| match a {
            Arm::T => Arm::NT,
            Arm::NT => Arm::T,
            o => o,
        };
        let rows = ds
            .rows()
            .iter()
            .map(|r| Household {
                d: swap(r.d),
                z: match r.d {
                    Arm::T => Choice::NT,
                    Arm::NT => Choice::T,
                    _ => r.z,
                },
                ..r.clone()
            })
            .collect();
        let swapped = RctDataset::new(ds.schema().to_vec(), rows).unwrap();
        let swapped_props = sample_propensities(&swapped).unwrap();
        let arms = [Arm::T, Arm::NT];
        let a = exhaustive_search(&w, &ds, &props, &arms, 2, 5).unwrap();
        let b = exhaustive_search(&w, &swapped, &swapped_props, &arms, 2, 5).unwrap();
        assert!((a.welfare - b.welfare).abs() < 1e-9);
        let mirrored: Vec<Arm> = a.policy.assign_all(&ds).unwrap().into_iter().map(swap).collect();
        let v = crate::welfare::welfare_of_assignment(&w.w, &swapped.arms(), &mirrored, &swapped_props)
            .unwrap();
        assert!((v - b.welfare).abs() < 1e-9);
    }

    #[test]
    fn negated_outcome_finds_minimum() {
        // maximizing -w minimizes w: no tree beats the negated optimum on w
        let (ds, w) = random_instance(14, 45, 1, 9);
        let props = sample_propensities(&ds).unwrap();
        let arms = [Arm::T, Arm::NT];
        let low = exhaustive_search(&w.scaled(-1.0), &ds, &props, &arms, 1, 5).unwrap();
        let high = exhaustive_search(&w, &ds, &props, &arms, 1, 5).unwrap();
        let low_on_w = empirical_welfare(&w, &ds, &low.policy, &props).unwrap();
        assert!((low_on_w + low.welfare).abs() < 1e-12);
        assert!(low_on_w <= high.welfare);
    }

    #[test]
    fn too_few_arms_or_bad_depth() {
        let (ds, w) = random_instance(5, 30, 1, 5);
        let props = sample_propensities(&ds).unwrap();
        assert!(exhaustive_search(&w, &ds, &props, &[Arm::T], 1, 5).is_err());
        assert!(exhaustive_search(&w, &ds, &props, &[Arm::T, Arm::T], 1, 5).is_err());
        assert!(exhaustive_search(&w, &ds, &props, &Arm::ALL, 4, 5).is_err());
        assert!(exhaustive_search(&w, &ds, &props, &Arm::ALL, 0, 5).is_err());
    }

    #[test]
    fn constant_covariates_return_uniform() {
        let (ds, w) = random_instance(6, 30, 2, 1);
        let props = sample_propensities(&ds).unwrap();
        let res = exhaustive_search(&w, &ds, &props, &Arm::ALL, 3, 5).unwrap();
        assert!(matches!(res.policy, AssignmentPolicy::Uniform(_)));
    }

    #[test]
    fn min_leaf_respected() {
        let (ds, w) = random_instance(7, 120, 2, 12);
        let props = sample_propensities(&ds).unwrap();
        let res = exhaustive_search(&w, &ds, &props, &Arm::ALL, 2, 10).unwrap();
        fn check(node: &Node, rows: Vec<&[f64]>, min_leaf: usize) {
            if let Node::Split {
                var,
                threshold,
                true_branch,
                false_branch,
            } = node
            {
                let (hi, lo): (Vec<&[f64]>, Vec<&[f64]>) =
                    rows.into_iter().partition(|x| x[*var] >= *threshold);
                assert!(hi.len() >= min_leaf && lo.len() >= min_leaf);
                check(true_branch, hi, min_leaf);
                check(false_branch, lo, min_leaf);
            }
        }
        check(&res.tree.root, ds.covariates(), 10);
    }

    #[test]
    fn deterministic_across_thread_pools() {
        let (ds, w) = random_instance(8, 150, 3, 6);
        let props = sample_propensities(&ds).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| exhaustive_search(&w, &ds, &props, &Arm::ALL, 3, 5).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn two_step_refines_step_one() {
        let (ds, w) = random_instance(9, 150, 2, 6);
        let props = sample_propensities(&ds).unwrap();
        let res = two_step_search(&w, &ds, &props, 2, 5).unwrap();
        assert_eq!(res.pairs.len(), 3);
        for po in &res.pairs {
            assert!(po.welfare >= po.step1_welfare, "{po:?}");
        }
        let best = res.pairs.iter().map(|p| p.welfare).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(res.welfare, best);
        assert!(res.tree.depth() <= 4);
        assert!(START_PAIRS.contains(&res.start_pair));
    }
}
