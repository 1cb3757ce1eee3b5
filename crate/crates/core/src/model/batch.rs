use std::collections::BTreeMap;

use crate::error::{PadError, Result};

/// A padded mini-batch of sequences in slot form.
///
/// Every referenced item is listed once in `items`; inputs and targets refer
/// to it through slot indices, so item representations are computed once per
/// batch and then gathered.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub b: usize,
    pub t: usize,
    /// Distinct item ids, ascending.
    pub items: Vec<usize>,
    /// `[b·t]` slots; padding repeats the sequence's first item.
    pub input_slots: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Flat `b·t` positions that carry a prediction.
    pub positions: Vec<usize>,
    pub pos_items: Vec<usize>,
    pub neg_items: Vec<usize>,
    pub pos_slots: Vec<usize>,
    pub neg_slots: Vec<usize>,
    /// Slots of behaviors and positive targets (negatives excluded).
    pub observed_slots: Vec<usize>,
}

impl Batch {
    /// Next-item training batch.
    ///
    /// For each sequence `s` (length ≥ 2), position `k` of input `s[..n−1]`
    /// predicts `s[k+1]` against `negatives[b][k]`. Inputs longer than
    /// `max_len` keep only their last `max_len` positions.
    pub fn next_item(seqs: &[&[usize]], negatives: &[Vec<usize>], max_len: usize) -> Result<Self> {
        if seqs.is_empty() || seqs.len() != negatives.len() {
            return Err(PadError::InvalidArgument(
                "batch needs sequences with matching negatives".into(),
            ));
        }
        let mut inputs = Vec::with_capacity(seqs.len());
        let mut targets = Vec::with_capacity(seqs.len());
        for (s, negs) in seqs.iter().zip(negatives) {
            if s.len() < 2 || negs.len() != s.len() - 1 {
                return Err(PadError::InvalidArgument(format!(
                    "sequence of length {} needs {} negatives, got {}",
                    s.len(),
                    s.len().saturating_sub(1),
                    negs.len()
                )));
            }
            let n_in = s.len() - 1;
            let skip = n_in.saturating_sub(max_len);
            inputs.push(&s[skip..n_in]);
            targets.push((skip..n_in).map(|k| (k - skip, s[k + 1], negs[k])).collect::<Vec<_>>());
        }
        Ok(Self::assemble(&inputs, &targets))
    }

    /// Batch for scoring: one prediction at the last behavior of each sequence.
    pub fn last_position(behaviors: &[&[usize]], max_len: usize) -> Result<Self> {
        let mut inputs = Vec::with_capacity(behaviors.len());
        for s in behaviors {
            if s.is_empty() {
                return Err(PadError::InvalidArgument("empty behavior sequence".into()));
            }
            inputs.push(&s[s.len().saturating_sub(max_len)..]);
        }
        Ok(Self::assemble(&inputs, &[]))
    }

    /// `targets[b]` lists (input position, positive, negative).
    pub fn with_targets(inputs: &[&[usize]], targets: &[Vec<(usize, usize, usize)>]) -> Self {
        Self::assemble(inputs, targets)
    }

    fn assemble(inputs: &[&[usize]], targets: &[Vec<(usize, usize, usize)>]) -> Self {
        let b = inputs.len();
        let t = inputs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut slot_of: BTreeMap<usize, usize> = BTreeMap::new();
        for s in inputs {
            slot_of.extend(s.iter().map(|&i| (i, 0)));
        }
        for tg in targets {
            for &(_, p, n) in tg {
                slot_of.insert(p, 0);
                slot_of.insert(n, 0);
            }
        }
        let items: Vec<usize> = slot_of.keys().copied().collect();
        for (k, v) in slot_of.values_mut().enumerate() {
            *v = k;
        }
        let mut batch = Batch {
            b,
            t,
            items,
            ..Default::default()
        };
        let mut observed = vec![false; batch.items.len()];
        for s in inputs {
            batch.lengths.push(s.len());
            for k in 0..t {
                let item = if k < s.len() { s[k] } else { s[0] };
                batch.input_slots.push(slot_of[&item]);
            }
            for &i in s.iter() {
                observed[slot_of[&i]] = true;
            }
        }
        if targets.is_empty() {
            batch.positions = batch.lengths.iter().enumerate().map(|(r, &l)| r * t + l - 1).collect();
        }
        for (row, tg) in targets.iter().enumerate() {
            for &(k, p, n) in tg {
                batch.positions.push(row * t + k);
                batch.pos_items.push(p);
                batch.neg_items.push(n);
                batch.pos_slots.push(slot_of[&p]);
                batch.neg_slots.push(slot_of[&n]);
                observed[slot_of[&p]] = true;
            }
        }
        batch.observed_slots = (0..batch.items.len()).filter(|&k| observed[k]).collect();
        batch
    }

    /// Number of scored (positive, negative) pairs.
    pub fn n_targets(&self) -> usize {
        self.pos_items.len()
    }

    pub fn observed_items(&self) -> Vec<usize> {
        self.observed_slots.iter().map(|&s| self.items[s]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_and_positions() {
        let a = [5usize, 2, 7];
        let b = [2usize, 9];
        let batch = Batch::next_item(&[&a, &b], &[vec![1, 3], vec![4]], 10).unwrap();
        assert_eq!(batch.items, vec![1, 2, 3, 4, 5, 7, 9]);
        assert_eq!((batch.b, batch.t), (2, 2));
        assert_eq!(batch.lengths, vec![2, 1]);
        // inputs [5,2] and [2,pad→2]
        let inputs: Vec<usize> = batch.input_slots.iter().map(|&s| batch.items[s]).collect();
        assert_eq!(inputs, vec![5, 2, 2, 2]);
        assert_eq!(batch.positions, vec![0, 1, 2]);
        assert_eq!(batch.pos_items, vec![2, 7, 9]);
        assert_eq!(batch.neg_items, vec![1, 3, 4]);
        assert_eq!(batch.observed_items(), vec![2, 5, 7, 9]);
    }

    #[test]
    fn truncates_to_latest() {
        let s = [1usize, 2, 3, 4, 5];
        let batch = Batch::next_item(&[&s], &[vec![0, 0, 0, 0]], 2).unwrap();
        let inputs: Vec<usize> = batch.input_slots.iter().map(|&k| batch.items[k]).collect();
        assert_eq!(inputs, vec![3, 4]);
        assert_eq!(batch.pos_items, vec![4, 5]);
    }
}
