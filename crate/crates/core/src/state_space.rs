//! Dense indexing of the sufficient-statistic simplex.
//!
//! A stage `i` holds every `(n_C, s_C, n_D, s_D)` with `n_C + n_D = i`,
//! `s_C <= n_C` and `s_D <= n_D`. States are laid out by ascending `n_C`,
//! then `s_C`, then `s_D`; `n_D = i - n_C` is implicit.

use crate::error::{Error, Result};

/// Allocation and success counts of both arms after `n_c + n_d` participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialState {
    pub n_c: u32,
    pub s_c: u32,
    pub n_d: u32,
    pub s_d: u32,
}

impl TrialState {
    pub const EMPTY: TrialState = TrialState { n_c: 0, s_c: 0, n_d: 0, s_d: 0 };

    pub const fn new(n_c: u32, s_c: u32, n_d: u32, s_d: u32) -> Self {
        Self { n_c, s_c, n_d, s_d }
    }

    #[inline]
    pub fn stage(&self) -> usize {
        (self.n_c + self.n_d) as usize
    }

    #[inline]
    pub fn total_successes(&self) -> usize {
        (self.s_c + self.s_d) as usize
    }

    #[inline]
    pub fn f_c(&self) -> u32 {
        self.n_c - self.s_c
    }

    #[inline]
    pub fn f_d(&self) -> u32 {
        self.n_d - self.s_d
    }

    pub fn is_valid(&self) -> bool {
        self.s_c <= self.n_c && self.s_d <= self.n_d
    }

    /// The same counts with the arm labels exchanged.
    pub fn swap_arms(&self) -> Self {
        Self { n_c: self.n_d, s_c: self.s_d, n_d: self.n_c, s_d: self.s_c }
    }
}

/// Number of states at stage `i`: `(i+1)(i+2)(i+3)/6`.
pub const fn stage_size(stage: usize) -> usize {
    (stage + 1) * (stage + 2) * (stage + 3) / 6
}

/// Offsets of the `n_C` slices of one stage inside a dense array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageLayout {
    stage: usize,
    offsets: Vec<usize>,
}

impl StageLayout {
    pub fn new(stage: usize) -> Self {
        let mut offsets = Vec::with_capacity(stage + 2);
        let mut acc = 0;
        for n_c in 0..=stage {
            offsets.push(acc);
            acc += (n_c + 1) * (stage - n_c + 1);
        }
        offsets.push(acc);
        Self { stage, offsets }
    }

    #[inline]
    pub fn stage(&self) -> usize {
        self.stage
    }

    #[inline]
    pub fn total(&self) -> usize {
        self.offsets[self.stage + 1]
    }

    /// Index range of the slice with `n_C = n_c`.
    #[inline]
    pub fn slice(&self, n_c: usize) -> std::ops::Range<usize> {
        self.offsets[n_c]..self.offsets[n_c + 1]
    }

    /// Dense index without validation; the caller guarantees membership.
    #[inline]
    pub fn index_unchecked(&self, n_c: u32, s_c: u32, s_d: u32) -> usize {
        let n_d = self.stage as u32 - n_c;
        self.offsets[n_c as usize] + (s_c * (n_d + 1) + s_d) as usize
    }

    pub fn contains(&self, state: &TrialState) -> bool {
        state.stage() == self.stage && state.is_valid()
    }

    pub fn index(&self, state: &TrialState) -> Result<usize> {
        if !self.contains(state) {
            return Err(Error::StateMismatch { state: *state, stage: self.stage });
        }
        Ok(self.index_unchecked(state.n_c, state.s_c, state.s_d))
    }

    pub fn state_of(&self, index: usize) -> Result<TrialState> {
        if index >= self.total() {
            return Err(Error::StageOutOfRange { stage: index, max: self.total().saturating_sub(1) });
        }
        let n_c = self.offsets.partition_point(|&o| o <= index) - 1;
        let n_d = self.stage - n_c;
        let rem = index - self.offsets[n_c];
        Ok(TrialState {
            n_c: n_c as u32,
            s_c: (rem / (n_d + 1)) as u32,
            n_d: n_d as u32,
            s_d: (rem % (n_d + 1)) as u32,
        })
    }

    /// All states of the stage in canonical order.
    pub fn states(&self) -> impl Iterator<Item = TrialState> + '_ {
        let stage = self.stage as u32;
        (0..=stage).flat_map(move |n_c| {
            let n_d = stage - n_c;
            (0..=n_c).flat_map(move |s_c| (0..=n_d).map(move |s_d| TrialState { n_c, s_c, n_d, s_d }))
        })
    }
}

/// Canonically ordered states of stage `stage` for a trial of size `max_stage`.
pub fn enumerate_states(stage: usize, max_stage: usize) -> Result<Vec<TrialState>> {
    if stage > max_stage {
        return Err(Error::StageOutOfRange { stage, max: max_stage });
    }
    Ok(StageLayout::new(stage).states().collect())
}

/// Valid predecessors of `state` one stage earlier, in the order
/// (control success, control failure, developmental success, developmental failure).
pub fn predecessors(state: &TrialState) -> impl Iterator<Item = TrialState> {
    let s = *state;
    let candidates = [
        (s.n_c >= 1 && s.s_c >= 1).then(|| TrialState { n_c: s.n_c - 1, s_c: s.s_c - 1, ..s }),
        (s.n_c >= 1 && s.n_c - 1 >= s.s_c).then(|| TrialState { n_c: s.n_c - 1, ..s }),
        (s.n_d >= 1 && s.s_d >= 1).then(|| TrialState { n_d: s.n_d - 1, s_d: s.s_d - 1, ..s }),
        (s.n_d >= 1 && s.n_d - 1 >= s.s_d).then(|| TrialState { n_d: s.n_d - 1, ..s }),
    ];
    candidates.into_iter().flatten()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(stage: u32) -> Vec<TrialState> {
        let mut out = Vec::new();
        for n_c in 0..=stage {
            for s_c in 0..=stage {
                for n_d in 0..=stage {
                    for s_d in 0..=stage {
                        let x = TrialState::new(n_c, s_c, n_d, s_d);
                        if x.is_valid() && x.stage() == stage as usize {
                            out.push(x);
                        }
                    }
                }
            }
        }
        out.sort_by_key(|x| (x.n_c, x.s_c, x.s_d));
        out
    }

    #[test]
    fn small_stages() {
        assert_eq!(enumerate_states(0, 4).unwrap(), vec![TrialState::EMPTY]);
        assert_eq!(
            enumerate_states(1, 4).unwrap(),
            vec![
                TrialState::new(0, 0, 1, 0),
                TrialState::new(0, 0, 1, 1),
                TrialState::new(1, 0, 0, 0),
                TrialState::new(1, 1, 0, 0),
            ]
        );
        assert!(matches!(enumerate_states(5, 4), Err(Error::StageOutOfRange { .. })));
    }

    #[test]
    fn matches_brute_enumeration_and_closed_form() {
        for i in 0..=10 {
            let states = enumerate_states(i, 10).unwrap();
            assert_eq!(states, brute(i as u32));
            assert_eq!(states.len(), stage_size(i));
        }
        for i in 0..=60 {
            assert_eq!(StageLayout::new(i).total(), stage_size(i));
        }
        assert_eq!(stage_size(240), 2_362_041);
    }

    #[test]
    fn index_round_trip() {
        assert_eq!(StageLayout::new(0).index(&TrialState::EMPTY).unwrap(), 0);
        let layout = StageLayout::new(5);
        for (k, x) in layout.states().enumerate() {
            assert_eq!(layout.index(&x).unwrap(), k);
            assert_eq!(layout.state_of(k).unwrap(), x);
        }
        let l3 = StageLayout::new(3);
        let mut idx: Vec<_> = l3.states().map(|x| l3.index(&x).unwrap()).collect();
        idx.sort();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let layout = StageLayout::new(3);
        assert!(layout.index(&TrialState::new(1, 0, 1, 0)).is_err());
        assert!(layout.index(&TrialState::new(1, 2, 2, 0)).is_err());
        assert!(layout.state_of(20).is_err());
    }

    #[test]
    fn successor_relation_is_inverse_of_predecessors() {
        for i in 0..8usize {
            let next = StageLayout::new(i + 1);
            let mut hits = vec![0usize; next.total()];
            for x in StageLayout::new(i).states() {
                let succ = [
                    TrialState { n_c: x.n_c + 1, s_c: x.s_c + 1, ..x },
                    TrialState { n_c: x.n_c + 1, ..x },
                    TrialState { n_d: x.n_d + 1, s_d: x.s_d + 1, ..x },
                    TrialState { n_d: x.n_d + 1, ..x },
                ];
                for y in succ {
                    assert!(predecessors(&y).any(|p| p == x));
                    hits[next.index(&y).unwrap()] += 1;
                }
            }
            for y in next.states() {
                assert_eq!(hits[next.index(&y).unwrap()], predecessors(&y).count());
            }
        }
    }
}
