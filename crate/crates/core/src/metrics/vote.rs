use std::collections::BTreeMap;

/// Outcome of a majority vote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vote<L> {
    /// Chosen by strictly more than half of the voters.
    Majority(L),
    /// No label reached a strict majority (also returned for an empty ballot).
    Tie,
}

impl<L> Vote<L> {
    pub fn majority(self) -> Option<L> {
        match self {
            Vote::Majority(l) => Some(l),
            Vote::Tie => None,
        }
    }
}

/// Strict-majority vote. Labels are compared by equality, so option sets only
/// agree when they contain exactly the same members.
pub fn majority_vote<L: Ord + Clone>(votes: &[L]) -> Vote<L> {
    let mut tally: BTreeMap<&L, usize> = BTreeMap::new();
    for v in votes {
        *tally.entry(v).or_default() += 1;
    }
    tally
        .into_iter()
        .find(|&(_, n)| 2 * n > votes.len())
        .map_or(Vote::Tie, |(l, _)| Vote::Majority(l.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(majority_vote(&["A", "A", "B"]), Vote::Majority("A"));
        assert_eq!(majority_vote(&["A", "B", "C"]), Vote::Tie);
        let votes = [set(&["A", "B"]), set(&["A", "B"]), set(&["A"])];
        assert_eq!(majority_vote(&votes), Vote::Majority(set(&["A", "B"])));
    }

    #[test]
    fn half_is_not_a_majority() {
        assert_eq!(majority_vote(&["A", "A", "B", "B"]), Vote::Tie);
        assert_eq!(majority_vote::<&str>(&[]), Vote::Tie);
        assert_eq!(majority_vote(&["A"]), Vote::Majority("A"));
    }
}
