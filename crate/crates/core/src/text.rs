//! Edit-distance keyword matching shared by value coercion, name references
//! and instance grouping.

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Largest accepted distance when matching against `keyword`:
/// `max(1, floor(chars / 4))`.
pub fn match_threshold(keyword: &str) -> usize {
    (keyword.chars().count() / 4).max(1)
}

/// Result of a fuzzy lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordMatch {
    pub index: usize,
    pub distance: usize,
}

/// Case-insensitive lookup of `value` among `keywords`.
///
/// Exact matches win. Otherwise the keyword with the smallest distance is
/// returned if that distance is within [`match_threshold`] of the keyword;
/// ties go to the earlier keyword.
pub fn match_keyword<S: AsRef<str>>(value: &str, keywords: &[S]) -> Option<KeywordMatch> {
    let needle = value.trim().to_lowercase();
    let lowered: Vec<String> = keywords.iter().map(|k| k.as_ref().to_lowercase()).collect();
    if let Some(index) = lowered.iter().position(|k| *k == needle) {
        return Some(KeywordMatch { index, distance: 0 });
    }
    let mut best: Option<KeywordMatch> = None;
    for (index, k) in lowered.iter().enumerate() {
        let distance = levenshtein(&needle, k);
        if distance > match_threshold(k) {
            continue;
        }
        if best.is_none_or(|b| distance < b.distance) {
            best = Some(KeywordMatch { index, distance });
        }
    }
    best
}

/// Symmetric similarity used for grouping names: within the threshold of
/// the shorter of the two.
pub fn names_similar(a: &str, b: &str) -> bool {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    if a == b {
        return true;
    }
    let shorter = if a.chars().count() <= b.chars().count() { &a } else { &b };
    levenshtein(&a, &b) <= match_threshold(shorter)
}

/// Strips trailing `_<digits>` numbering suffixes: `cup_2` -> `cup`,
/// `cup_2_3` -> `cup`. A name made only of a suffix is left alone.
pub fn strip_numbering_suffix(name: &str) -> &str {
    let mut s = name;
    while let Some(pos) = s.rfind('_') {
        let tail = &s[pos + 1..];
        if pos == 0 || tail.is_empty() || !tail.chars().all(|c| c.is_ascii_digit()) {
            break;
        }
        s = &s[..pos];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full-matrix recursion-free oracle, written independently of the
    /// two-row implementation above.
    fn oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn known_distances() {
        assert_eq!(oracle("fragil", "fragile"), 1);
        assert_eq!(levenshtein("fragil", "fragile"), 1);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("botle", "bottle"), oracle("botle", "bottle"));
    }

    #[test]
    fn thresholds() {
        assert_eq!(match_threshold("fragile"), 1);
        assert_eq!(match_threshold("cup"), 1);
        assert_eq!(match_threshold("screwdriver"), 2);
    }

    #[test]
    fn keyword_lookup() {
        let kw = ["fragile", "sturdy"];
        assert_eq!(match_keyword("fragil", &kw), Some(KeywordMatch { index: 0, distance: 1 }));
        assert_eq!(match_keyword("STURDY", &kw), Some(KeywordMatch { index: 1, distance: 0 }));
        let kw = ["metal", "plastic"];
        assert_eq!(match_keyword("metalic-ish-stuff", &kw), None);
        assert!(oracle("metalic-ish-stuff", "metal") > match_threshold("metal"));
    }

    #[test]
    fn suffix_stripping() {
        assert_eq!(strip_numbering_suffix("cup_2"), "cup");
        assert_eq!(strip_numbering_suffix("cup_2_3"), "cup");
        assert_eq!(strip_numbering_suffix("cup"), "cup");
        assert_eq!(strip_numbering_suffix("paper_towel"), "paper_towel");
        assert_eq!(strip_numbering_suffix("_2"), "_2");
    }

    #[test]
    fn similar_names() {
        assert!(names_similar("mug", "mugg"));
        assert!(!names_similar("mug", "bottle"));
    }

    proptest! {
        #[test]
        fn matches_oracle(a in "[a-d]{0,8}", b in "[a-d]{0,8}") {
            prop_assert_eq!(levenshtein(&a, &b), oracle(&a, &b));
        }
    }
}
