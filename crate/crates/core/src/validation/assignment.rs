//! Staged assignment heuristic reconciling the original grounding with the
//! validator's proposals.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ValidationError;
use super::groups::{NameGroup, group_index};
use super::proposals::{Proposed, ValidationProposal};

/// A track and the instance it was grounded to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OriginalGrounding {
    pub track_id: u64,
    pub instance: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Validated { instance: usize },
    Corrected { from: usize, instance: usize },
    Rejected,
}

impl Verdict {
    pub fn instance(&self) -> Option<usize> {
        match self {
            Verdict::Validated { instance } | Verdict::Corrected { instance, .. } => Some(*instance),
            Verdict::Rejected => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Validated { .. } => "validated",
            Verdict::Corrected { .. } => "corrected",
            Verdict::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackVerdict {
    pub track_id: u64,
    pub verdict: Verdict,
    /// Rule stage (1 to 4) that decided the verdict.
    pub stage: u8,
}

/// One audit line per track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub track_id: u64,
    pub original: String,
    pub proposed: String,
    pub verdict: String,
    pub stage: u8,
    pub confidence: f64,
    /// Instance the track ends up on.
    pub assigned: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// In input order.
    pub verdicts: Vec<TrackVerdict>,
    /// Final instance to track mapping.
    pub mapping: BTreeMap<usize, u64>,
    pub audit: Vec<AuditEntry>,
}

impl AssignmentResult {
    pub fn verdict(&self, track_id: u64) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.track_id == track_id).map(|v| &v.verdict)
    }
}

fn check_input(
    original: &[OriginalGrounding],
    proposals: &[ValidationProposal],
    gidx: &[Option<usize>],
) -> Result<HashMap<u64, Proposed>, ValidationError> {
    let bad = |m: String| Err(ValidationError::InconsistentInput(m));
    let mut ids = HashSet::new();
    for o in original {
        if !ids.insert(o.track_id) {
            return bad(format!("track {} appears twice", o.track_id));
        }
        if gidx.get(o.instance).copied().flatten().is_none() {
            return bad(format!("track {} grounded to ungrouped instance {}", o.track_id, o.instance));
        }
    }
    let mut by_track = HashMap::new();
    for p in proposals {
        if !ids.contains(&p.track_id) {
            return bad(format!("proposal for unknown track {}", p.track_id));
        }
        if let Some(i) = p.proposed.instance() {
            if gidx.get(i).copied().flatten().is_none() {
                return bad(format!("proposal for track {} names ungrouped instance {i}", p.track_id));
            }
        }
        if by_track.insert(p.track_id, p.proposed.clone()).is_some() {
            return bad(format!("two proposals for track {}", p.track_id));
        }
    }
    if by_track.len() != ids.len() {
        return bad(format!("{} proposals for {} tracks", by_track.len(), ids.len()));
    }
    Ok(by_track)
}

/// Decides one verdict per track.
///
/// 1. Invalid proposals are rejected.
/// 2. Proposals in the original instance's group keep the original
///    instance; a duplicate whose original is taken moves to a free member
///    of the group, or is rejected.
/// 3. Cross-group proposals move to a free member of the proposed group,
///    the proposed instance first.
/// 4. With no free member the track is rejected; nothing is displaced.
///
/// Within stages 2 and 3 tracks are served in descending detector
/// confidence, ties by track id.
pub fn solve_assignment<S: AsRef<str>>(
    original: &[OriginalGrounding],
    proposals: &[ValidationProposal],
    groups: &[NameGroup],
    names: &[S],
) -> Result<AssignmentResult, ValidationError> {
    let gidx = group_index(groups, names.len());
    let proposed = check_input(original, proposals, &gidx)?;
    let group_of = |i: usize| gidx[i].expect("checked");
    let mut order: Vec<usize> = (0..original.len()).collect();
    order.sort_by(|&a, &b| {
        original[b]
            .confidence
            .total_cmp(&original[a].confidence)
            .then(original[a].track_id.cmp(&original[b].track_id))
    });
    let mut taken = vec![false; names.len()];
    let mut decided: Vec<Option<(Verdict, u8)>> = vec![None; original.len()];
    let prop = |k: usize| proposed[&original[k].track_id].instance();

    for k in 0..original.len() {
        if prop(k).is_none() {
            decided[k] = Some((Verdict::Rejected, 1));
        }
    }
    let same_group = |k: usize| prop(k).is_some_and(|p| group_of(p) == group_of(original[k].instance));
    for &k in &order {
        let inst = original[k].instance;
        if decided[k].is_none() && same_group(k) && !taken[inst] {
            taken[inst] = true;
            decided[k] = Some((Verdict::Validated { instance: inst }, 2));
        }
    }
    let free_member = |p: usize, taken: &mut Vec<bool>| -> Option<usize> {
        let g = &groups[group_of(p)];
        let pick = std::iter::once(p).chain(g.members.iter().copied()).find(|&m| !taken[m]);
        if let Some(m) = pick {
            taken[m] = true;
        }
        pick
    };
    for &k in &order {
        if decided[k].is_none() && same_group(k) {
            let from = original[k].instance;
            decided[k] = Some(match free_member(prop(k).expect("valid"), &mut taken) {
                Some(instance) => (Verdict::Corrected { from, instance }, 2),
                None => (Verdict::Rejected, 2),
            });
        }
    }
    for &k in &order {
        if decided[k].is_none() {
            let from = original[k].instance;
            decided[k] = Some(match free_member(prop(k).expect("valid"), &mut taken) {
                Some(instance) => (Verdict::Corrected { from, instance }, 3),
                None => (Verdict::Rejected, 4),
            });
        }
    }

    let mut verdicts = Vec::with_capacity(original.len());
    let mut mapping = BTreeMap::new();
    let mut audit = Vec::with_capacity(original.len());
    for (k, o) in original.iter().enumerate() {
        let (verdict, stage) = decided[k].expect("every track decided");
        if let Some(i) = verdict.instance() {
            let prev = mapping.insert(i, o.track_id);
            debug_assert!(prev.is_none(), "instance {i} assigned twice");
        }
        verdicts.push(TrackVerdict {
            track_id: o.track_id,
            verdict,
            stage,
        });
        audit.push(AuditEntry {
            track_id: o.track_id,
            original: names[o.instance].as_ref().to_string(),
            proposed: match &proposed[&o.track_id] {
                Proposed::Instance { instance, .. } => names[*instance].as_ref().to_string(),
                Proposed::Invalid => crate::description::INVALID_KEYWORD.to_string(),
            },
            verdict: verdict.name().to_string(),
            stage,
            confidence: o.confidence,
            assigned: verdict.instance().map(|i| names[i].as_ref().to_string()),
        });
    }
    Ok(AssignmentResult {
        verdicts,
        mapping,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::groups::group_names;
    use proptest::prelude::*;
    use std::time::Duration;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn og(track_id: u64, instance: usize, confidence: f64) -> OriginalGrounding {
        OriginalGrounding {
            track_id,
            instance,
            confidence,
        }
    }

    fn prop(track_id: u64, instance: Option<usize>, names: &[String]) -> ValidationProposal {
        ValidationProposal {
            track_id,
            proposed: match instance {
                Some(i) => Proposed::Instance {
                    instance: i,
                    object_name: names[i].clone(),
                },
                None => Proposed::Invalid,
            },
            raw: String::new(),
            latency: Duration::ZERO,
            note: None,
        }
    }

    fn solve(n: &[String], orig: &[OriginalGrounding], props: &[Option<usize>]) -> AssignmentResult {
        let p: Vec<_> = orig.iter().zip(props).map(|(o, &i)| prop(o.track_id, i, n)).collect();
        solve_assignment(orig, &p, &group_names(n), n).unwrap()
    }

    /// Largest number of tracks that can sit on a member of their proposed
    /// group under an injective mapping, by exhaustive search.
    fn best_agreement(n: &[String], props: &[Option<usize>]) -> usize {
        let groups = group_names(n);
        let gidx = group_index(&groups, n.len());
        fn go(k: usize, props: &[Option<usize>], gidx: &[Option<usize>], used: &mut Vec<bool>) -> usize {
            if k == props.len() {
                return 0;
            }
            let mut best = go(k + 1, props, gidx, used);
            if let Some(p) = props[k] {
                for m in 0..used.len() {
                    if !used[m] && gidx[m] == gidx[p] {
                        used[m] = true;
                        best = best.max(1 + go(k + 1, props, gidx, used));
                        used[m] = false;
                    }
                }
            }
            best
        }
        go(0, props, &gidx, &mut vec![false; n.len()])
    }

    #[test]
    fn full_agreement_validates() {
        let n = names(&["cup", "bottle"]);
        let r = solve(&n, &[og(0, 0, 0.9), og(1, 1, 0.8)], &[Some(0), Some(1)]);
        assert_eq!(r.verdict(0), Some(&Verdict::Validated { instance: 0 }));
        assert_eq!(r.verdict(1), Some(&Verdict::Validated { instance: 1 }));
        assert_eq!(r.mapping, BTreeMap::from([(0, 0), (1, 1)]));
    }

    #[test]
    fn taken_cross_group_target_rejects() {
        let n = names(&["cup", "bottle"]);
        let r = solve(&n, &[og(10, 0, 0.9), og(11, 1, 0.7)], &[Some(1), Some(1)]);
        assert_eq!(r.verdict(11), Some(&Verdict::Validated { instance: 1 }));
        assert_eq!(r.verdict(10), Some(&Verdict::Rejected));
        assert_eq!(r.verdicts[0].stage, 4);
        assert_eq!(best_agreement(&n, &[Some(1), Some(1)]), r.mapping.len());
    }

    #[test]
    fn duplicate_moves_to_free_member() {
        let n = names(&["cup", "cup_2"]);
        let r = solve(&n, &[og(0, 0, 0.9), og(1, 0, 0.8)], &[Some(0), Some(0)]);
        assert_eq!(r.verdict(0), Some(&Verdict::Validated { instance: 0 }));
        assert_eq!(r.verdict(1), Some(&Verdict::Corrected { from: 0, instance: 1 }));
        assert_eq!(best_agreement(&n, &[Some(0), Some(0)]), 2);
    }

    #[test]
    fn invalid_only_track() {
        let n = names(&["cup"]);
        let r = solve(&n, &[og(3, 0, 0.5)], &[None]);
        assert_eq!(r.verdict(3), Some(&Verdict::Rejected));
        assert!(r.mapping.is_empty());
        let line = serde_json::to_value(&r.audit[0]).unwrap();
        assert_eq!(line["proposed"], "invalid");
        assert_eq!(line["verdict"], "rejected");
        assert_eq!(line["stage"], 1);
    }

    #[test]
    fn cross_group_correction() {
        let n = names(&["cup", "bottle", "bottle_2"]);
        let r = solve(&n, &[og(0, 0, 0.9), og(1, 1, 0.5)], &[Some(1), Some(1)]);
        assert_eq!(r.verdict(1), Some(&Verdict::Validated { instance: 1 }));
        assert_eq!(r.verdict(0), Some(&Verdict::Corrected { from: 0, instance: 2 }));
    }

    #[test]
    fn mismatched_proposals_rejected() {
        let n = names(&["cup"]);
        let orig = [og(0, 0, 0.5)];
        let p = [prop(1, Some(0), &n)];
        assert!(matches!(
            solve_assignment(&orig, &p, &group_names(&n), &n),
            Err(ValidationError::InconsistentInput(_))
        ));
        assert!(solve_assignment(&orig, &[], &group_names(&n), &n).is_err());
    }

    fn scenario() -> impl Strategy<Value = (Vec<String>, Vec<(usize, u8)>, Vec<Option<usize>>)> {
        let pool = ["cup", "cup_2", "bottle", "bottle_2", "mug", "plate", "fork"];
        (1usize..=5)
            .prop_flat_map(move |ni| {
                let n = proptest::sample::subsequence(pool.to_vec(), ni);
                (n, 1usize..=5).prop_flat_map(move |(n, nt)| {
                    let k = n.len();
                    (
                        Just(n.into_iter().map(str::to_string).collect::<Vec<_>>()),
                        proptest::collection::vec((0..k, 0u8..4), nt),
                        proptest::collection::vec(proptest::option::weighted(0.8, 0..k), nt),
                    )
                })
            })
    }

    proptest! {
        #[test]
        fn mapping_injective_and_maximal((n, orig, props) in scenario()) {
            let o: Vec<_> = orig.iter().enumerate().map(|(t, &(i, c))| og(t as u64, i, c as f64 / 4.0)).collect();
            let r = solve(&n, &o, &props);
            prop_assert_eq!(r.verdicts.len(), o.len());
            let assigned: Vec<usize> = r.verdicts.iter().filter_map(|v| v.verdict.instance()).collect();
            let unique: HashSet<_> = assigned.iter().collect();
            prop_assert_eq!(unique.len(), assigned.len());
            prop_assert_eq!(r.mapping.len(), assigned.len());
            if o.len() <= 4 {
                prop_assert_eq!(assigned.len(), best_agreement(&n, &props));
            }
            let again = solve(&n, &o, &props);
            prop_assert_eq!(again, r);
        }
    }
}
