use serde::{Deserialize, Serialize};

use crate::annotation::IdSet;

/// Objects whose placement is pinned by a later skill.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedSet(pub IdSet);

impl FixedSet {
    pub fn contains(&self, id: u16) -> bool {
        self.0.contains(&id)
    }

    pub fn intersects(&self, ids: &IdSet) -> bool {
        !self.0.is_disjoint(ids)
    }
}

/// Moving one skill back in time: the skill's targets become pinned and its
/// in-hand objects are released, `(fixed ∪ target) \ hand`.
pub fn update_fixed_set(fixed: &FixedSet, target: &IdSet, hand: &IdSet) -> FixedSet {
    FixedSet(fixed.0.union(target).filter(|id| !hand.contains(id)).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u16]) -> IdSet {
        v.iter().copied().collect()
    }

    #[test]
    fn final_bridge_skill() {
        let f = update_fixed_set(&FixedSet::default(), &ids(&[1, 2]), &ids(&[3]));
        assert_eq!(f.0, ids(&[1, 2]));
    }

    #[test]
    fn release_removes_id() {
        let f = update_fixed_set(&FixedSet(ids(&[1, 2])), &ids(&[2]), &ids(&[2]));
        assert_eq!(f.0, ids(&[1]));
    }

    #[test]
    fn empty_skill_is_noop() {
        let f = update_fixed_set(&FixedSet(ids(&[1, 3])), &IdSet::new(), &IdSet::new());
        assert_eq!(f.0, ids(&[1, 3]));
    }
}
