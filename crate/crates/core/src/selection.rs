//! Candidate beam sets for tracking stages.
//!
//! Codeword indices live on a ring of size Q (the DFT codebook is periodic
//! in its phase step), so every window wraps modulo Q. "Increasing" means the
//! optimal codeword index has been growing between the last two stages.
//!
//! Local order: members are listed by their offset from the anchor measured
//! along the movement direction, ascending. With an increasing direction that
//! is plain ascending index order (reserve beams first, then the anchor and
//! the forward beams); a decreasing direction yields the mirror image, so a
//! given local position always means the same step along the motion.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Even,
    Uneven,
    Interleaved,
    /// Every codeword, in index order. Used for scanning stages.
    Full,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Even => "even",
            Strategy::Uneven => "uneven",
            Strategy::Interleaved => "interleaved",
            Strategy::Full => "full",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Strategy::Even),
            "uneven" => Ok(Strategy::Uneven),
            "interleaved" => Ok(Strategy::Interleaved),
            _ => Err(Error::Config(format!(
                "unknown selection strategy {s:?} (expected even, uneven or interleaved)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectionEstimate {
    Increasing,
    Decreasing,
    Unknown,
}

impl DirectionEstimate {
    fn sign(self) -> i64 {
        match self {
            DirectionEstimate::Decreasing => -1,
            _ => 1,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            DirectionEstimate::Increasing => DirectionEstimate::Decreasing,
            DirectionEstimate::Decreasing => DirectionEstimate::Increasing,
            DirectionEstimate::Unknown => DirectionEstimate::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    global_indices: Vec<usize>,
    strategy: Strategy,
    reserve_count: usize,
    anchor: usize,
    direction: DirectionEstimate,
    codebook_size: usize,
}

/// Wraps an integer offset from `anchor` onto the 1-based ring `[1, Q]`.
pub fn wrap_index(anchor: usize, offset: i64, q: usize) -> usize {
    let zero_based = (anchor as i64 - 1 + offset).rem_euclid(q as i64);
    zero_based as usize + 1
}

/// Signed circular offset `to - from` in `[-Q/2, Q/2)`.
pub fn circular_offset(from: usize, to: usize, q: usize) -> i64 {
    let q = q as i64;
    let half = q / 2;
    (to as i64 - from as i64 + half).rem_euclid(q) - half
}

impl CandidateSet {
    fn from_offsets(
        anchor: usize,
        offsets: impl IntoIterator<Item = i64>,
        q: usize,
        strategy: Strategy,
        reserve_count: usize,
        direction: DirectionEstimate,
    ) -> Self {
        let sign = direction.sign();
        let global_indices = offsets
            .into_iter()
            .map(|o| wrap_index(anchor, sign * o, q))
            .collect();
        Self {
            global_indices,
            strategy,
            reserve_count,
            anchor,
            direction,
            codebook_size: q,
        }
    }

    /// All Q codewords in index order.
    pub fn full(q: usize) -> Self {
        Self {
            global_indices: (1..=q).collect(),
            strategy: Strategy::Full,
            reserve_count: 0,
            anchor: 1,
            direction: DirectionEstimate::Unknown,
            codebook_size: q,
        }
    }

    pub fn global_indices(&self) -> &[usize] {
        &self.global_indices
    }

    pub fn len(&self) -> usize {
        self.global_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_indices.is_empty()
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn reserve_count(&self) -> usize {
        self.reserve_count
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn direction(&self) -> DirectionEstimate {
        self.direction
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn contains(&self, global: usize) -> bool {
        self.global_indices.contains(&global)
    }

    /// 1-based local index to global codebook index.
    pub fn to_global(&self, local: usize) -> Result<usize> {
        if local == 0 || local > self.len() {
            return Err(Error::InvalidParameter(format!(
                "local index {local} outside [1, {}]",
                self.len()
            )));
        }
        Ok(self.global_indices[local - 1])
    }

    /// Global codebook index to 1-based local index, if the beam is in the set.
    pub fn to_local(&self, global: usize) -> Option<usize> {
        self.global_indices
            .iter()
            .position(|&g| g == global)
            .map(|p| p + 1)
    }

    /// Local index of the member circularly closest to `global`. Ties go to the
    /// member further along the movement direction.
    pub fn nearest_local(&self, global: usize) -> usize {
        if let Some(local) = self.to_local(global) {
            return local;
        }
        let sign = self.direction.sign();
        let mut best = (i64::MAX, i64::MIN, 0usize);
        for (i, &g) in self.global_indices.iter().enumerate() {
            let off = circular_offset(global, g, self.codebook_size);
            let dist = off.abs();
            let along = sign * off;
            if dist < best.0 || (dist == best.0 && along > best.1) {
                best = (dist, along, i + 1);
            }
        }
        best.2
    }
}

/// Direction of beam motion from the last two stage optima.
pub fn estimate_direction(recent_optima: &[usize], q: usize) -> DirectionEstimate {
    if recent_optima.len() < 2 {
        return DirectionEstimate::Unknown;
    }
    let last = recent_optima[recent_optima.len() - 1];
    let first = recent_optima[recent_optima.len() - 2];
    match circular_offset(first, last, q).signum() {
        1 => DirectionEstimate::Increasing,
        -1 => DirectionEstimate::Decreasing,
        _ => DirectionEstimate::Unknown,
    }
}

fn check_common(q_prev: usize, size: usize, q: usize) -> Result<()> {
    if q == 0 || q_prev == 0 || q_prev > q {
        return Err(Error::InvalidParameter(format!(
            "previous beam {q_prev} outside [1, {q}]"
        )));
    }
    if size == 0 || size > q {
        return Err(Error::InvalidParameter(format!(
            "candidate set size {size} outside [1, {q}]"
        )));
    }
    Ok(())
}

fn centred_offsets(size: usize, stride: i64) -> impl Iterator<Item = i64> {
    // The extra beam of an even-sized window goes to the increasing side.
    let below = ((size - 1) / 2) as i64;
    let above = size as i64 - 1 - below;
    (-below..=above).map(move |o| o * stride)
}

/// Window of `size` consecutive codewords centred on `q_prev`.
pub fn even_coverage(q_prev: usize, size: usize, q: usize) -> Result<CandidateSet> {
    check_common(q_prev, size, q)?;
    Ok(CandidateSet::from_offsets(
        q_prev,
        centred_offsets(size, 1),
        q,
        Strategy::Even,
        0,
        DirectionEstimate::Unknown,
    ))
}

fn check_reserve(size: usize, j0: usize) -> Result<()> {
    if j0 == 0 || j0 >= size {
        return Err(Error::InvalidParameter(format!(
            "reserve count {j0} must satisfy 1 <= j0 < size ({size})"
        )));
    }
    Ok(())
}

/// `size - j0` beams from `q_prev` onwards in the movement direction plus
/// `j0` reserve beams just behind it. Falls back to [`even_coverage`] when the
/// direction is unknown.
pub fn uneven_coverage(
    q_prev: usize,
    size: usize,
    q: usize,
    j0: usize,
    dir: DirectionEstimate,
) -> Result<CandidateSet> {
    check_common(q_prev, size, q)?;
    check_reserve(size, j0)?;
    if dir == DirectionEstimate::Unknown {
        return even_coverage(q_prev, size, q);
    }
    let forward = (size - j0) as i64;
    Ok(CandidateSet::from_offsets(
        q_prev,
        -(j0 as i64)..forward,
        q,
        Strategy::Uneven,
        j0,
        dir,
    ))
}

/// Stride-2 analogue of [`uneven_coverage`].
pub fn interleaved_coverage(
    q_prev: usize,
    size: usize,
    q: usize,
    j0: usize,
    dir: DirectionEstimate,
) -> Result<CandidateSet> {
    check_common(q_prev, size, q)?;
    if size == 1 {
        return Ok(CandidateSet::from_offsets(
            q_prev,
            [0],
            q,
            Strategy::Interleaved,
            0,
            DirectionEstimate::Unknown,
        ));
    }
    if 2 * size > q {
        return Err(Error::InvalidParameter(format!(
            "interleaved set of size {size} needs 2*size <= Q ({q})"
        )));
    }
    check_reserve(size, j0)?;
    if dir == DirectionEstimate::Unknown {
        return Ok(CandidateSet::from_offsets(
            q_prev,
            centred_offsets(size, 2),
            q,
            Strategy::Interleaved,
            0,
            DirectionEstimate::Unknown,
        ));
    }
    let forward = (size - j0) as i64;
    Ok(CandidateSet::from_offsets(
        q_prev,
        (-(j0 as i64)..forward).map(|o| 2 * o),
        q,
        Strategy::Interleaved,
        j0,
        dir,
    ))
}

/// Dispatches on the configured strategy.
pub fn build_candidate_set(
    strategy: Strategy,
    q_prev: usize,
    size: usize,
    q: usize,
    j0: usize,
    dir: DirectionEstimate,
) -> Result<CandidateSet> {
    match strategy {
        Strategy::Even => even_coverage(q_prev, size, q),
        Strategy::Uneven => uneven_coverage(q_prev, size, q, j0, dir),
        Strategy::Interleaved => interleaved_coverage(q_prev, size, q, j0, dir),
        Strategy::Full => Ok(CandidateSet::full(q)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use DirectionEstimate::*;

    #[test]
    fn direction_examples() {
        assert_eq!(estimate_direction(&[10, 12], 64), Increasing);
        assert_eq!(estimate_direction(&[10, 10], 64), Unknown);
        assert_eq!(estimate_direction(&[2, 63], 64), Decreasing);
        assert_eq!(estimate_direction(&[7], 64), Unknown);
        // Only the last two entries count.
        assert_eq!(estimate_direction(&[40, 10, 9], 64), Decreasing);
    }

    #[test]
    fn even_examples() {
        let cs = even_coverage(32, 11, 64).unwrap();
        assert_eq!(cs.global_indices(), (27..=37).collect::<Vec<_>>());
        let cs = even_coverage(5, 16, 16).unwrap();
        let mut all = cs.global_indices().to_vec();
        all.sort();
        assert_eq!(all, (1..=16).collect::<Vec<_>>());
        let cs = even_coverage(2, 5, 64).unwrap();
        assert_eq!(cs.global_indices(), &[64, 1, 2, 3, 4]);
        assert!(even_coverage(2, 65, 64).is_err());
        // Even size: extra beam on the increasing side.
        assert_eq!(even_coverage(10, 4, 64).unwrap().global_indices(), &[9, 10, 11, 12]);
    }

    #[test]
    fn uneven_examples() {
        let cs = uneven_coverage(32, 11, 64, 2, Increasing).unwrap();
        assert_eq!(cs.global_indices(), &[30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40]);
        assert_eq!(cs.reserve_count(), 2);
        assert_eq!(
            uneven_coverage(32, 11, 64, 2, Unknown).unwrap(),
            even_coverage(32, 11, 64).unwrap()
        );
        let cs = uneven_coverage(63, 5, 64, 1, Increasing).unwrap();
        assert_eq!(cs.global_indices(), &[62, 63, 64, 1, 2]);
        assert!(uneven_coverage(32, 11, 64, 11, Increasing).is_err());
        assert!(uneven_coverage(32, 11, 64, 0, Increasing).is_err());
    }

    #[test]
    fn uneven_decreasing_is_mirrored() {
        let cs = uneven_coverage(32, 11, 64, 2, Decreasing).unwrap();
        assert_eq!(cs.global_indices(), &[34, 33, 32, 31, 30, 29, 28, 27, 26, 25, 24]);
        assert_eq!(cs.to_local(32), Some(3));
    }

    #[test]
    fn interleaved_examples() {
        let cs = interleaved_coverage(32, 11, 64, 2, Increasing).unwrap();
        assert_eq!(cs.global_indices(), &[28, 30, 32, 34, 36, 38, 40, 42, 44, 46, 48]);
        assert_eq!(
            interleaved_coverage(32, 1, 64, 2, Increasing).unwrap().global_indices(),
            &[32]
        );
        let cs = interleaved_coverage(32, 5, 64, 2, Unknown).unwrap();
        assert_eq!(cs.global_indices(), &[28, 30, 32, 34, 36]);
        assert!(interleaved_coverage(32, 33, 64, 2, Increasing).is_err());
    }

    #[test]
    fn local_global_mapping() {
        let cs = even_coverage(35, 11, 64).unwrap();
        assert_eq!(cs.global_indices()[0], 30);
        assert_eq!(cs.to_global(3).unwrap(), 32);
        assert_eq!(cs.to_local(50), None);
        assert!(cs.to_global(0).is_err());
        assert!(cs.to_global(12).is_err());
        for i in 1..=cs.len() {
            assert_eq!(cs.to_local(cs.to_global(i).unwrap()), Some(i));
        }
    }

    #[test]
    fn nearest_member_for_labels() {
        let cs = uneven_coverage(32, 11, 64, 2, Increasing).unwrap();
        assert_eq!(cs.nearest_local(45), 11);
        assert_eq!(cs.nearest_local(20), 1);
        assert_eq!(cs.nearest_local(33), 4);
        // Beam 6 is three steps from both ends of {1, 2, 3} on the ring of 8;
        // beam 1 lies ahead of it in the increasing direction.
        let cs = uneven_coverage(2, 3, 8, 1, Increasing).unwrap();
        assert_eq!(cs.global_indices(), &[1, 2, 3]);
        assert_eq!(cs.nearest_local(6), 1);
    }

    #[test]
    fn full_set() {
        let cs = CandidateSet::full(8);
        assert_eq!(cs.global_indices(), &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(cs.strategy(), Strategy::Full);
    }
}
