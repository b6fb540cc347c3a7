use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of items (individuals, or stacked samples) to centers
/// `0..n_centers`. Every center holds at least one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederatedPartition {
    assignments: Vec<usize>,
    n_centers: usize,
}

impl FederatedPartition {
    pub fn new(assignments: Vec<usize>, n_centers: usize) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::InvalidPartition("no items to partition".to_string()));
        }
        let mut used = vec![false; n_centers];
        for (i, &c) in assignments.iter().enumerate() {
            if c >= n_centers {
                return Err(Error::InvalidPartition(format!(
                    "item {i} assigned to center {c}, but there are only {n_centers} centers"
                )));
            }
            used[c] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::InvalidPartition(format!("center {empty} holds no items")));
        }
        Ok(Self {
            assignments,
            n_centers,
        })
    }

    /// Every item in one center.
    pub fn single(n_items: usize) -> Result<Self> {
        Self::new(vec![0; n_items], 1)
    }

    /// Builds a partition from arbitrary labels, renumbering them densely in
    /// increasing label order.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let assignments = labels
            .iter()
            .map(|l| distinct.binary_search(l).expect("label present"))
            .collect();
        Self::new(assignments, distinct.len())
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn n_centers(&self) -> usize {
        self.n_centers
    }

    pub fn center_of(&self, item: usize) -> usize {
        self.assignments[item]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Items of every center, each list in ascending item order.
    pub fn members_by_center(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_centers];
        for (i, &c) in self.assignments.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    pub fn members(&self, center: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == center)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_centers];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }

    /// Partition of `items` (re-indexed `0..items.len()`), with center ids
    /// compacted over the centers that remain.
    pub fn restrict(&self, items: &[usize]) -> Result<Self> {
        let labels: Vec<usize> = items.iter().map(|&i| self.assignments[i]).collect();
        Self::from_labels(&labels)
    }

    /// Partition over an expanded item space in which item `i` of `self`
    /// becomes `counts[i]` consecutive items.
    pub fn expand(&self, counts: &[usize]) -> Result<Self> {
        if counts.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: counts.len(),
            });
        }
        let assignments: Vec<usize> = self
            .assignments
            .iter()
            .zip(counts)
            .flat_map(|(&c, &n)| std::iter::repeat_n(c, n))
            .collect();
        Self::new(assignments, self.n_centers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unused_and_out_of_range_centers() {
        assert!(FederatedPartition::new(vec![0, 0, 2], 3).is_err());
        assert!(FederatedPartition::new(vec![0, 3], 2).is_err());
        assert!(FederatedPartition::new(vec![], 1).is_err());
    }

    #[test]
    fn members_and_restriction() {
        let p = FederatedPartition::new(vec![1, 0, 1, 2, 0], 3).unwrap();
        assert_eq!(p.members_by_center(), vec![vec![1, 4], vec![0, 2], vec![3]]);
        assert_eq!(p.sizes(), vec![2, 2, 1]);
        let r = p.restrict(&[0, 2, 3]).unwrap();
        assert_eq!(r.assignments(), &[0, 0, 1]);
        assert_eq!(r.n_centers(), 2);
        let e = p.expand(&[2, 0, 1, 1, 3]).unwrap();
        assert_eq!(e.assignments(), &[1, 1, 1, 2, 0, 0, 0]);
    }
}
