//! Joint-state indexing over lists of finite-cardinality variables.
//!
//! Throughout the crate a joint assignment to an ordered variable list is
//! flattened to a single index lexicographically, with the *last* listed
//! variable varying fastest. This order is part of the model file format.

/// Flatten a joint assignment to its lexicographic index.
pub fn joint_index(states: &[usize], cards: &[usize]) -> usize {
    debug_assert_eq!(states.len(), cards.len());
    let mut idx = 0;
    for (s, c) in states.iter().zip(cards) {
        debug_assert!(s < c);
        idx = idx * c + s;
    }
    idx
}

/// Inverse of [`joint_index`].
pub fn unrank(mut idx: usize, cards: &[usize]) -> Vec<usize> {
    let mut states = vec![0; cards.len()];
    for (slot, c) in states.iter_mut().zip(cards).rev() {
        *slot = idx % c;
        idx /= c;
    }
    states
}

/// Number of joint states, or `None` on overflow.
pub fn joint_card(cards: &[usize]) -> Option<usize> {
    cards.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c))
}

/// Iterate all joint assignments in lexicographic order (last varies fastest).
pub fn assignments(cards: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total = joint_card(cards).expect("joint state space overflow");
    (0..total).map(move |i| unrank(i, cards))
}
