//! Cache-layout and attention-cost accounting.
//!
//! Costs are abstract token-pair interactions, not time. A step's queries are
//! the still-masked positions and each attends to the whole sequence. The
//! cache records which absolute positions are committed as sorted, disjoint,
//! inclusive ranges; an insert that does not extend the rightmost range as
//! one contiguous run is a gather event.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Attention interactions for one pass: `active_len` queries over
/// `frozen_len + active_len` keys.
pub fn attention_cost(frozen_len: usize, active_len: usize) -> u64 {
    active_len as u64 * (frozen_len as u64 + active_len as u64)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheModel {
    segments: Vec<(usize, usize)>,
    append_count: usize,
    gather_events: usize,
    cost_units: u64,
    gather_penalty: u64,
}

impl CacheModel {
    pub fn new(gather_penalty: u64) -> Self {
        CacheModel {
            gather_penalty,
            ..Default::default()
        }
    }

    /// Cache seeded with the prompt occupying positions `0..prompt_len`.
    pub fn with_prompt(prompt_len: usize, gather_penalty: u64) -> Self {
        let mut c = CacheModel::new(gather_penalty);
        if prompt_len > 0 {
            c.segments.push((0, prompt_len - 1));
        }
        c
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn append_count(&self) -> usize {
        self.append_count
    }

    pub fn gather_events(&self) -> usize {
        self.gather_events
    }

    pub fn cost_units(&self) -> u64 {
        self.cost_units
    }

    pub fn add_cost(&mut self, units: u64) {
        self.cost_units += units;
    }

    pub fn contains(&self, pos: usize) -> bool {
        let i = self.segments.partition_point(|&(_, end)| end < pos);
        self.segments.get(i).is_some_and(|&(start, _)| start <= pos)
    }

    /// Insert newly committed positions. Returns whether this insert was a
    /// gather event.
    pub fn append(&mut self, positions: &[usize]) -> Result<bool> {
        if positions.is_empty() {
            return Err(Error::Contract("empty cache append".into()));
        }
        let mut sorted = positions.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("duplicate position in cache append".into()));
        }
        if let Some(&p) = sorted.iter().find(|&&p| self.contains(p)) {
            return Err(Error::Contract(format!("position {p} already cached")));
        }

        let next = self.segments.last().map_or(0, |&(_, end)| end + 1);
        let contiguous = sorted.windows(2).all(|w| w[1] == w[0] + 1);
        let gather = !(contiguous && sorted[0] == next);

        for &p in &sorted {
            self.insert(p);
        }
        self.append_count += 1;
        if gather {
            self.gather_events += 1;
            self.cost_units += self.gather_penalty;
        }
        Ok(gather)
    }

    fn insert(&mut self, p: usize) {
        let i = self.segments.partition_point(|&(_, end)| end < p);
        let joins_left = i > 0 && self.segments[i - 1].1 + 1 == p;
        let joins_right = i < self.segments.len() && self.segments[i].0 == p + 1;
        match (joins_left, joins_right) {
            (true, true) => {
                self.segments[i - 1].1 = self.segments[i].1;
                self.segments.remove(i);
            }
            (true, false) => self.segments[i - 1].1 = p,
            (false, true) => self.segments[i].0 = p,
            (false, false) => self.segments.insert(i, (p, p)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_extension() {
        let mut c = CacheModel::with_prompt(10, 0);
        assert!(!c.append(&[10, 11, 12]).unwrap());
        assert_eq!(c.segments(), &[(0, 12)]);
        assert_eq!(c.gather_events(), 0);
    }

    #[test]
    fn fragmentation() {
        let mut c = CacheModel::with_prompt(10, 0);
        assert!(c.append(&[11, 14]).unwrap());
        assert_eq!(c.segments(), &[(0, 9), (11, 11), (14, 14)]);
        assert_eq!(c.gather_events(), 1);
        // filling the hole merges everything to the left of 14
        assert!(c.append(&[10]).unwrap());
        assert_eq!(c.segments(), &[(0, 11), (14, 14)]);
        assert!(c.append(&[12, 13]).unwrap());
        assert_eq!(c.segments(), &[(0, 14)]);
    }

    #[test]
    fn empty_prompt_first_append() {
        let mut c = CacheModel::new(0);
        assert!(!c.append(&[0, 1]).unwrap());
        let mut d = CacheModel::new(0);
        assert!(d.append(&[3]).unwrap());
    }

    #[test]
    fn double_commit_rejected() {
        let mut c = CacheModel::with_prompt(4, 0);
        assert!(c.append(&[2]).is_err());
        assert!(c.append(&[5, 5]).is_err());
        assert!(c.append(&[]).is_err());
        assert_eq!(c.append_count(), 0);
    }

    #[test]
    fn penalty_accrues_per_gather() {
        let mut c = CacheModel::with_prompt(2, 7);
        c.append(&[4]).unwrap();
        c.append(&[5]).unwrap();
        c.add_cost(3);
        assert_eq!(c.cost_units(), 10);
    }

    #[test]
    fn cost_arithmetic() {
        assert_eq!(attention_cost(0, 8), 64);
        assert_eq!(attention_cost(56, 8), 512);
        assert_eq!(attention_cost(10, 0), 0);
    }
}
