//! Basis blades of G(3,0,1) and the generated Cayley table.
//!
//! Coefficient order used everywhere in this crate:
//!
//! ```text
//! index  0  1   2   3   4   5    6    7    8    9    10   11    12    13    14    15
//! blade  1  e0  e1  e2  e3  e01  e02  e03  e12  e13  e23  e012  e013  e023  e123  e0123
//! ```

mod generated {
    include!(concat!(env!("OUT_DIR"), "/cayley.rs"));
}

pub(crate) use generated::{DUAL, GP_TERMS, WEDGE_TERMS};

/// Number of basis blades.
pub const DIM: usize = 16;

pub const BLADE_NAMES: [&str; DIM] = [
    "1", "e0", "e1", "e2", "e3", "e01", "e02", "e03", "e12", "e13", "e23", "e012", "e013", "e023",
    "e123", "e0123",
];

pub const BLADE_INDICES: [&[u8]; DIM] = [
    &[],
    &[0],
    &[1],
    &[2],
    &[3],
    &[0, 1],
    &[0, 2],
    &[0, 3],
    &[1, 2],
    &[1, 3],
    &[2, 3],
    &[0, 1, 2],
    &[0, 1, 3],
    &[0, 2, 3],
    &[1, 2, 3],
    &[0, 1, 2, 3],
];

pub const GRADES: [usize; DIM] = [0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 4];

/// Blades whose index set does not contain e0. These carry the invariant inner product.
pub const EUCLIDEAN_BLADES: [usize; 8] = [0, 2, 3, 4, 8, 9, 10, 14];

/// `E0_LEFT[i] = Some(j)` when `e0 * blade_i = +blade_j`, `None` when it vanishes.
pub const E0_LEFT: [Option<usize>; DIM] = [
    Some(1),
    None,
    Some(5),
    Some(6),
    Some(7),
    None,
    None,
    None,
    Some(11),
    Some(12),
    Some(13),
    None,
    None,
    None,
    Some(15),
    None,
];

/// A signed basis blade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisBlade {
    pub index: usize,
    pub sign: i8,
}

impl BasisBlade {
    pub const fn new(index: usize) -> Self {
        Self { index, sign: 1 }
    }

    /// Builds a blade from an arbitrary list of distinct generator indices,
    /// sorting it and tracking the permutation sign. Returns `None` for
    /// repeated or out-of-range generators.
    pub fn from_generators(generators: &[u8]) -> Option<Self> {
        let mut sorted = [0u8; 4];
        if generators.len() > 4 {
            return None;
        }
        sorted[..generators.len()].copy_from_slice(generators);
        let sorted = &mut sorted[..generators.len()];
        let mut swaps = 0;
        for i in 0..sorted.len() {
            for j in 0..sorted.len() - 1 - i {
                if sorted[j] > sorted[j + 1] {
                    sorted.swap(j, j + 1);
                    swaps += 1;
                }
            }
        }
        if sorted.windows(2).any(|w| w[0] == w[1]) || sorted.iter().any(|&g| g > 3) {
            return None;
        }
        let index = BLADE_INDICES.iter().position(|b| *b == &*sorted)?;
        Some(Self {
            index,
            sign: if swaps % 2 == 0 { 1 } else { -1 },
        })
    }

    pub fn indices(&self) -> &'static [u8] {
        BLADE_INDICES[self.index]
    }

    pub fn grade(&self) -> usize {
        GRADES[self.index]
    }

    pub fn name(&self) -> &'static str {
        BLADE_NAMES[self.index]
    }
}

/// Signed-blade multiplication table for G(3,0,1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CayleyTable {
    target: [[u8; DIM]; DIM],
    sign: [[i8; DIM]; DIM],
}

impl CayleyTable {
    /// Product of basis blades `i` and `j`; `None` when the metric kills it.
    pub fn entry(&self, i: usize, j: usize) -> Option<BasisBlade> {
        match self.sign[i][j] {
            0 => None,
            s => Some(BasisBlade {
                index: self.target[i][j] as usize,
                sign: s,
            }),
        }
    }

    /// Number of non-vanishing entries.
    pub fn nonzero_count(&self) -> usize {
        self.sign.iter().flatten().filter(|&&s| s != 0).count()
    }
}

/// Returns the table generated at build time.
pub fn build_cayley_table() -> CayleyTable {
    CayleyTable {
        target: generated::CAYLEY_TARGET,
        sign: generated::CAYLEY_SIGN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_row_and_column_are_identity() {
        let t = build_cayley_table();
        for i in 0..DIM {
            assert_eq!(t.entry(0, i), Some(BasisBlade::new(i)));
            assert_eq!(t.entry(i, 0), Some(BasisBlade::new(i)));
        }
    }

    #[test]
    fn e1_e2_is_e12_and_e0_squares_to_zero() {
        let t = build_cayley_table();
        assert_eq!(t.entry(2, 3), Some(BasisBlade::new(8)));
        assert_eq!(t.entry(3, 2), Some(BasisBlade { index: 8, sign: -1 }));
        assert_eq!(t.entry(1, 1), None);
        assert_eq!(t.entry(2, 2), Some(BasisBlade::new(0)));
    }

    #[test]
    fn e0_left_matches_table() {
        let t = build_cayley_table();
        for i in 0..DIM {
            let got = t.entry(1, i).map(|b| {
                assert_eq!(b.sign, 1);
                b.index
            });
            assert_eq!(got, E0_LEFT[i]);
        }
    }

    #[test]
    fn from_generators_tracks_sign() {
        assert_eq!(
            BasisBlade::from_generators(&[2, 1]),
            Some(BasisBlade { index: 8, sign: -1 })
        );
        assert_eq!(BasisBlade::from_generators(&[1, 1]), None);
        assert_eq!(BasisBlade::from_generators(&[3, 0, 1, 2]).unwrap().index, 15);
    }
}
