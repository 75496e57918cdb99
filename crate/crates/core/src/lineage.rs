//! Arithmetic on the binary-tree cell labeling scheme.
//!
//! The founding cell is labelled 1; the daughters of cell `n` are `2n`
//! (new pole) and `2n+1` (old pole). Even labels are therefore type N,
//! odd labels type O, and the whole ancestor type sequence is the base-2
//! expansion of the label. The type of the root and of generation-1
//! cells is unobservable and reported as an error / left out of type
//! sequences.
//!
//! Labels on the cumulated-old-pole spine grow like `2^g`, and observed
//! comb trees reach generation 300+, so explicit labels are `u128` with
//! overflow surfaced as an error; deep comb cells are carried as
//! `(generation, pole)` pairs instead (see [`CombCell`]).

use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest generation whose labels still fit in a `u128`.
pub const MAX_EXPLICIT_GENERATION: u32 = 126;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineageError {
    #[error("label must be >= 1")]
    InvalidLabel,
    #[error("cell 1 is the root and has no mother")]
    RootHasNoMother,
    #[error("pole type of cell {0} is unobservable")]
    UndefinedType(u128),
    #[error("cell {0} is below generation 2, type sequence unknown")]
    InsufficientDepth(u128),
    #[error("labels of generation {0} overflow 128-bit integers")]
    LabelOverflow(u32),
}

/// Pole type of a cell: the daughter built around the newly created pole
/// is type N, its sister keeping the mother's old pole is type O.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoleType {
    New,
    Old,
}

impl PoleType {
    fn from_bit(bit: u128) -> Self {
        if bit & 1 == 0 {
            PoleType::New
        } else {
            PoleType::Old
        }
    }
}

impl fmt::Display for PoleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoleType::New => write!(f, "N"),
            PoleType::Old => write!(f, "O"),
        }
    }
}

/// Binary-tree cell label, root = 1.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CellLabel(u128);

impl CellLabel {
    pub const ROOT: CellLabel = CellLabel(1);

    pub fn new(value: u128) -> Result<Self, LineageError> {
        if value == 0 {
            Err(LineageError::InvalidLabel)
        } else {
            Ok(CellLabel(value))
        }
    }

    pub fn value(self) -> u128 {
        self.0
    }

    /// Generation within the tree, `floor(log2 label)`; the root is
    /// generation 0.
    pub fn generation(self) -> u32 {
        127 - self.0.leading_zeros()
    }

    pub fn mother(self) -> Result<CellLabel, LineageError> {
        if self.0 < 2 {
            Err(LineageError::RootHasNoMother)
        } else {
            Ok(CellLabel(self.0 / 2))
        }
    }

    /// Daughter labels `(2n, 2n+1)`, or `None` on 128-bit overflow.
    pub fn daughters(self) -> Option<(CellLabel, CellLabel)> {
        let new = self.0.checked_mul(2)?;
        Some((CellLabel(new), CellLabel(new + 1)))
    }

    /// N for even labels, O for odd; undefined for the root.
    pub fn pole_type(self) -> Result<PoleType, LineageError> {
        if self.0 < 2 {
            Err(LineageError::UndefinedType(self.0))
        } else {
            Ok(PoleType::from_bit(self.0))
        }
    }

    /// Types of the cell and its ancestors, oldest first, self last.
    ///
    /// The generation-1 ancestor's type is unobservable and dropped, so
    /// the sequence has `generation - 1` entries and requires
    /// generation >= 2.
    pub fn type_sequence(self) -> Result<Vec<PoleType>, LineageError> {
        let gen = self.generation();
        if gen < 2 {
            return Err(LineageError::InsufficientDepth(self.0));
        }
        // Bits below the leading 1, high to low, skipping the topmost
        // (generation-1 ancestor).
        let mut seq = Vec::with_capacity((gen - 1) as usize);
        for i in (0..gen - 1).rev() {
            seq.push(PoleType::from_bit(self.0 >> i));
        }
        Ok(seq)
    }

    /// Length of the maximal run of the cell's own type at the tail of
    /// its type sequence, together with that type.
    pub fn consecutive_poles(self) -> Result<(u32, PoleType), LineageError> {
        let gen = self.generation();
        if gen < 2 {
            return Err(LineageError::InsufficientDepth(self.0));
        }
        let own = self.0 & 1;
        let mut run = 0;
        while run < gen - 1 && (self.0 >> run) & 1 == own {
            run += 1;
        }
        Ok((run, PoleType::from_bit(own)))
    }
}

impl fmt::Display for CellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The generation-`n` pair on the cumulated-old-pole spine:
/// new pole `2^{n+1} - 2`, old pole `2^{n+1} - 1`.
pub fn comb_labels(generation: u32) -> Result<(CellLabel, CellLabel), LineageError> {
    if generation < 1 {
        return Err(LineageError::InvalidLabel);
    }
    if generation > MAX_EXPLICIT_GENERATION {
        return Err(LineageError::LabelOverflow(generation));
    }
    let old = (1u128 << (generation + 1)) - 1;
    Ok((CellLabel(old - 1), CellLabel(old)))
}

/// A comb-subtree cell identified by generation and pole type, used when
/// the explicit label would overflow (Wang-style channels reach
/// generation 302).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CombCell {
    pub generation: u32,
    pub pole: PoleType,
}

impl CombCell {
    /// Materialize the explicit label when it fits in 128 bits.
    pub fn label(self) -> Result<CellLabel, LineageError> {
        let (new, old) = comb_labels(self.generation)?;
        Ok(match self.pole {
            PoleType::New => new,
            PoleType::Old => old,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lbl(v: u128) -> CellLabel {
        CellLabel::new(v).unwrap()
    }

    #[test]
    fn mother_worked_examples() {
        assert_eq!(lbl(103).mother().unwrap(), lbl(51));
        assert_eq!(lbl(2).mother().unwrap(), lbl(1));
        assert_eq!(lbl(19).mother().unwrap(), lbl(9));
        assert!(matches!(
            lbl(1).mother(),
            Err(LineageError::RootHasNoMother)
        ));
    }

    #[test]
    fn pole_type_worked_examples() {
        assert_eq!(lbl(103).pole_type().unwrap(), PoleType::Old);
        assert_eq!(lbl(2).pole_type().unwrap(), PoleType::New);
        assert_eq!(lbl(19).pole_type().unwrap(), PoleType::Old);
        assert!(lbl(1).pole_type().is_err());
    }

    #[test]
    fn type_sequence_worked_examples() {
        use PoleType::{New as N, Old as O};
        assert_eq!(lbl(19).type_sequence().unwrap(), vec![N, O, O]);
        assert_eq!(lbl(103).type_sequence().unwrap(), vec![N, N, O, O, O]);
        assert_eq!(lbl(4).type_sequence().unwrap(), vec![N]);
        assert!(lbl(3).type_sequence().is_err());
    }

    #[test]
    fn consecutive_poles_worked_examples() {
        assert_eq!(lbl(103).consecutive_poles().unwrap(), (3, PoleType::Old));
        assert_eq!(lbl(51).consecutive_poles().unwrap(), (2, PoleType::Old));
        // all-ones labels 2^{n+1}-1 carry n-1 consecutive old poles
        for n in 2..=10u32 {
            let label = lbl((1u128 << (n + 1)) - 1);
            assert_eq!(label.consecutive_poles().unwrap(), (n - 1, PoleType::Old));
            // agrees with brute force over the type sequence
            let seq = label.type_sequence().unwrap();
            let own = *seq.last().unwrap();
            let brute = seq.iter().rev().take_while(|&&t| t == own).count() as u32;
            assert_eq!(label.consecutive_poles().unwrap().0, brute);
        }
    }

    #[test]
    fn comb_label_examples() {
        assert_eq!(comb_labels(1).unwrap(), (lbl(2), lbl(3)));
        assert_eq!(comb_labels(2).unwrap(), (lbl(6), lbl(7)));
        assert_eq!(
            comb_labels(50).unwrap(),
            (lbl((1 << 51) - 2), lbl((1 << 51) - 1))
        );
        assert!(matches!(
            comb_labels(200),
            Err(LineageError::LabelOverflow(200))
        ));
    }

    #[test]
    fn comb_spine_recurrence() {
        for n in 2..=60u32 {
            let prev = comb_labels(n - 1).unwrap().1;
            let cur = comb_labels(n).unwrap().1;
            assert_eq!(cur.value(), 2 * prev.value() + 1);
        }
    }

    #[test]
    fn daughter_identities() {
        for k in 2..2048u128 {
            let cell = lbl(k);
            let (d_new, d_old) = cell.daughters().unwrap();
            assert_eq!(d_new.mother().unwrap(), cell);
            assert_eq!(d_old.mother().unwrap(), cell);
            assert_eq!(d_new.generation(), cell.generation() + 1);
            assert_eq!(d_old.generation(), cell.generation() + 1);
            if cell.generation() >= 2 {
                let mut seq_n = cell.type_sequence().unwrap();
                seq_n.push(PoleType::New);
                assert_eq!(d_new.type_sequence().unwrap(), seq_n);
                let mut seq_o = cell.type_sequence().unwrap();
                seq_o.push(PoleType::Old);
                assert_eq!(d_old.type_sequence().unwrap(), seq_o);
            }
        }
    }
}
