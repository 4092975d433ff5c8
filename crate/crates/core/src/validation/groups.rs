//! Partitions instances into groups of interchangeable names.

use serde::{Deserialize, Serialize};

use crate::description::StructuredDescription;
use crate::text::{names_similar, strip_numbering_suffix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameGroup {
    pub id: usize,
    /// Instance indices in description order.
    pub members: Vec<usize>,
    /// Base name of the first member.
    pub base: String,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Base names are compared after stripping `_<digits>`; equal or similar
/// bases join one group, closed transitively. Groups are ordered by their
/// first member.
pub fn group_names<S: AsRef<str>>(names: &[S]) -> Vec<NameGroup> {
    let bases: Vec<&str> = names.iter().map(|n| strip_numbering_suffix(n.as_ref())).collect();
    let mut parent: Vec<usize> = (0..names.len()).collect();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            if names_similar(bases[i], bases[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<NameGroup> = Vec::new();
    let mut slot_of_root = vec![usize::MAX; names.len()];
    for i in 0..names.len() {
        let r = find(&mut parent, i);
        if slot_of_root[r] == usize::MAX {
            slot_of_root[r] = groups.len();
            groups.push(NameGroup {
                id: groups.len(),
                members: Vec::new(),
                base: bases[i].to_string(),
            });
        }
        groups[slot_of_root[r]].members.push(i);
    }
    groups
}

pub fn group_instances(desc: &StructuredDescription) -> Vec<NameGroup> {
    group_names(&desc.names())
}

/// Group id per instance.
pub fn group_index(groups: &[NameGroup], n: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n];
    for g in groups {
        for &m in &g.members {
            if m < n {
                out[m] = Some(g.id);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn member_sets(g: &[NameGroup]) -> Vec<Vec<usize>> {
        g.iter().map(|g| g.members.clone()).collect()
    }

    #[test]
    fn suffix_and_distance() {
        let g = group_names(&names(&["cup", "cup_2", "bottle"]));
        assert_eq!(member_sets(&g), vec![vec![0, 1], vec![2]]);
        assert_eq!(g[0].base, "cup");
        assert_eq!(group_names(&names(&["mug", "mugg"])).len(), 1);
        assert_eq!(group_names(&names(&["apple", "banana", "tractor", "cup"])).len(), 4);
    }

    #[test]
    fn closure_is_transitive() {
        // "cat"~"bat" and "bat"~"bar" but "cat" and "bar" are 2 apart.
        let g = group_names(&names(&["cat", "bar", "bat"]));
        assert_eq!(member_sets(&g), vec![vec![0, 1, 2]]);
    }

    proptest! {
        #[test]
        fn groups_partition(raw in proptest::collection::vec("[a-c]{1,4}(_[0-9])?", 0..8)) {
            let g = group_names(&raw);
            let mut seen: Vec<usize> = g.iter().flat_map(|g| g.members.clone()).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..raw.len()).collect::<Vec<_>>());
            prop_assert!(g.iter().all(|g| !g.members.is_empty()));
            for a in &g {
                for b in &g {
                    if a.id == b.id { continue; }
                    for &i in &a.members {
                        for &j in &b.members {
                            prop_assert!(!names_similar(strip_numbering_suffix(&raw[i]), strip_numbering_suffix(&raw[j])));
                        }
                    }
                }
            }
        }
    }
}
