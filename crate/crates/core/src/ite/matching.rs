//! Nearest-propensity matching with replacement inside a caliper.
//!
//! Candidates are ranked by `(gap, |t_1 - t_2|, control patient_id, control
//! window)`, which is a total order on distinct controls, so the result does
//! not depend on the order of the control pool.

use serde::{Deserialize, Serialize};

use super::groups::Member;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: Member,
    pub control: Member,
    pub propensity_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    /// In the order of the treated input.
    pub pairs: Vec<MatchedPair>,
    pub unmatched: Vec<Member>,
}

/// Scored member: `(member, propensity)`.
pub type Scored = (Member, f64);

fn rank(treated: &Member, control: &Member, gap: f64) -> (f64, usize, u64, usize) {
    (gap, treated.window.abs_diff(control.window), control.patient_id, control.window)
}

fn better(a: (f64, usize, u64, usize), b: (f64, usize, u64, usize)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)).is_lt()
}

/// Standard deviation-based default caliper: `0.2 * sd(propensities)`.
pub fn default_caliper(propensities: &[f64]) -> f64 {
    0.2 * crate::stats::std_dev(propensities)
}

pub fn match_groups(treated: &[Scored], controls: &[Scored], caliper: f64) -> Result<MatchOutcome> {
    if !(caliper > 0.0) {
        return Err(Error::Config(format!("caliper must be positive, got {caliper}")));
    }
    if treated.iter().chain(controls).any(|(_, p)| !p.is_finite()) {
        return Err(Error::Data("non-finite propensity score".into()));
    }
    let mut pool: Vec<Scored> = controls.to_vec();
    pool.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut outcome = MatchOutcome::default();
    for &(t_member, q) in treated {
        let pos = pool.partition_point(|c| c.1 < q);
        let usable = |i: usize| pool[i].0 != t_member;
        let gap = |i: usize| (q - pool[i].1).abs();

        let left = (0..pos).rev().find(|&i| usable(i));
        let right = (pos..pool.len()).find(|&i| usable(i));
        let best_gap = match (left, right) {
            (Some(l), Some(r)) => gap(l).min(gap(r)),
            (Some(l), None) => gap(l),
            (None, Some(r)) => gap(r),
            (None, None) => {
                outcome.unmatched.push(t_member);
                continue;
            }
        };
        let mut best: Option<(usize, (f64, usize, u64, usize))> = None;
        let mut consider = |i: usize| {
            let key = rank(&t_member, &pool[i].0, gap(i));
            if best.map_or(true, |(_, b)| better(key, b)) {
                best = Some((i, key));
            }
        };
        // gaps grow monotonically away from `pos`, so ties form contiguous runs
        for i in (0..pos).rev() {
            if !usable(i) {
                continue;
            }
            if gap(i) != best_gap {
                break;
            }
            consider(i);
        }
        for i in pos..pool.len() {
            if !usable(i) {
                continue;
            }
            if gap(i) != best_gap {
                break;
            }
            consider(i);
        }
        match best {
            Some((i, _)) if best_gap <= caliper => outcome.pairs.push(MatchedPair {
                treated: t_member,
                control: pool[i].0,
                propensity_gap: best_gap,
            }),
            _ => outcome.unmatched.push(t_member),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive O(n^2) reference.
    fn brute_force(treated: &[Scored], controls: &[Scored], caliper: f64) -> MatchOutcome {
        let mut out = MatchOutcome::default();
        for &(t, q) in treated {
            let mut best: Option<(Member, (f64, usize, u64, usize))> = None;
            for &(c, p) in controls {
                if c == t {
                    continue;
                }
                let key = ((q - p).abs(), t.window.abs_diff(c.window), c.patient_id, c.window);
                let replace = match best {
                    None => true,
                    Some((_, b)) => key.partial_cmp(&b) == Some(std::cmp::Ordering::Less),
                };
                if replace {
                    best = Some((c, key));
                }
            }
            match best {
                Some((c, key)) if key.0 <= caliper => out.pairs.push(MatchedPair {
                    treated: t,
                    control: c,
                    propensity_gap: key.0,
                }),
                _ => out.unmatched.push(t),
            }
        }
        out
    }

    #[test]
    fn exact_clone_is_matched_with_zero_gap() {
        let treated = [(Member::new(1, 5), 0.3)];
        let controls = [(Member::new(2, 4), 0.31), (Member::new(3, 5), 0.3), (Member::new(4, 1), 0.2)];
        let out = match_groups(&treated, &controls, 0.05).unwrap();
        assert_eq!(out.pairs[0].control, Member::new(3, 5));
        assert_eq!(out.pairs[0].propensity_gap, 0.0);
    }

    #[test]
    fn tiny_caliper_leaves_everyone_unmatched() {
        let treated = [(Member::new(1, 5), 0.3), (Member::new(2, 5), 0.6)];
        let controls = [(Member::new(3, 5), 0.4)];
        let out = match_groups(&treated, &controls, 1e-6).unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.unmatched.len(), 2);
    }

    #[test]
    fn ties_prefer_close_windows_then_small_ids() {
        let treated = [(Member::new(0, 10), 0.5)];
        let controls = [
            (Member::new(9, 3), 0.75),
            (Member::new(8, 9), 0.25),
            (Member::new(7, 11), 0.75),
            (Member::new(5, 30), 0.5 + 1e-9),
        ];
        let out = match_groups(&treated, &controls, 0.3).unwrap();
        assert_eq!(out.pairs[0].control, Member::new(5, 30));
        let controls = &controls[..3];
        let out = match_groups(&treated, controls, 0.3).unwrap();
        assert_eq!(out.pairs[0].control, Member::new(7, 11));
    }

    #[test]
    fn same_patient_window_is_never_its_own_control() {
        let m = Member::new(1, 2);
        let out = match_groups(&[(m, 0.5)], &[(m, 0.5), (Member::new(2, 2), 0.7)], 0.5).unwrap();
        assert_eq!(out.pairs[0].control, Member::new(2, 2));
    }

    #[test]
    fn non_positive_caliper_is_a_config_error() {
        assert!(matches!(match_groups(&[], &[], 0.0), Err(Error::Config(_))));
        assert!(matches!(match_groups(&[], &[], f64::NAN), Err(Error::Config(_))));
    }

    fn instance() -> impl Strategy<Value = (Vec<Scored>, Vec<Scored>, f64)> {
        let member = (0u64..40, 0usize..20).prop_map(|(p, w)| Member::new(p, w));
        // coarse grid of scores to force plenty of ties
        let score = prop_oneof![(0u32..50).prop_map(|k| k as f64 / 50.0), 0.0f64..1.0];
        (
            prop::collection::vec((member.clone(), score.clone()), 1..50),
            prop::collection::vec((member, score), 1..200),
            0.001f64..0.3,
        )
    }

    proptest! {
        #[test]
        fn fast_matching_equals_brute_force((treated, controls, caliper) in instance()) {
            let fast = match_groups(&treated, &controls, caliper).unwrap();
            prop_assert_eq!(&fast, &brute_force(&treated, &controls, caliper));
            for p in &fast.pairs {
                prop_assert!(p.propensity_gap <= caliper);
            }
        }

        #[test]
        fn control_order_does_not_matter((treated, controls, caliper) in instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = controls.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                match_groups(&treated, &controls, caliper).unwrap(),
                match_groups(&treated, &shuffled, caliper).unwrap()
            );
        }
    }
}
