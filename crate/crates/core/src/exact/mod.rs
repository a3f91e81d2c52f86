//! Exact ground states: exhaustive enumeration for small instances and a
//! column-sweep dynamic program over the Chimera structure for larger ones.
//! Ground truth for every other module.

mod brute;
mod dp;

use thiserror::Error;

use crate::chimera::{energy, Instance, SpinConfig};

pub use brute::brute_force;
pub use dp::{column_dp, DpLimits};

/// Gap between the ground state and the first excited level for ±J, h = 0
/// instances (all energies share one parity class, spaced by even integers).
pub const PM1_GAP: f64 = 2.0;

/// Exact degeneracy counting is limited to this many free spins; beyond it
/// the enumeration reports [`Degeneracy::NotComputed`].
pub const DEGENERACY_SPIN_LIMIT: usize = 26;

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error("instance has {0} active spins; brute force handles at most 32")]
    TooLarge(usize),
    #[error("DP interface needs {bits} state bits, over the configured limit {limit}")]
    InterfaceTooLarge { bits: u32, limit: u32 },
    #[error("operation requires a J = ±1, h = 0 instance")]
    NotPlusMinusOne,
    #[error("instance has no active spins")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    /// Number of optimal configurations; saturates at `u64::MAX`.
    Counted(u64),
    NotComputed,
}

/// An exact ground-state certificate: the optimal energy, one witness
/// configuration achieving it, and (when computed) the count of optima.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub e0: f64,
    pub degeneracy: Degeneracy,
    pub witness: SpinConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateLabel {
    /// Energy equals E0.
    Gs,
    /// Energy equals E0 + 2, the minimal excitation for ±J, h = 0.
    Es,
    Other,
}

/// Labels stored configurations as ground states, minimally excited states
/// (E = E0 + 2) or other. Only defined for ±J, h = 0 instances, where the
/// excitation gap is universally 2.
pub fn excitation_gap_states(
    instance: &Instance,
    configs: &[SpinConfig],
    e0: f64,
) -> Result<Vec<StateLabel>, ExactError> {
    if !instance.is_pm1() {
        return Err(ExactError::NotPlusMinusOne);
    }
    configs
        .iter()
        .map(|c| {
            let e = energy(instance, c).map_err(|_| ExactError::Empty)?;
            Ok(if e == e0 {
                StateLabel::Gs
            } else if e == e0 + PM1_GAP {
                StateLabel::Es
            } else {
                StateLabel::Other
            })
        })
        .collect()
}

/// Solves by whichever exact method fits: the column DP whenever its
/// interface is within limits (polynomial in practice), falling back to
/// brute force for small instances it cannot sweep.
pub fn solve(instance: &Instance) -> Result<ExactResult, ExactError> {
    match column_dp(instance, &DpLimits::default()) {
        Ok(r) => Ok(r),
        Err(ExactError::InterfaceTooLarge { .. }) if instance.n() <= 32 => brute_force(instance),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{build_chimera, generate_instance};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    fn labels_witness_and_excited() {
        // Not every tiny instance has a state exactly at E0+2 (a graph
        // whose degrees are all even spaces its levels by 4), so use a
        // shape with odd-degree vertices and scan seeds.
        let g = Arc::new(build_chimera(1, 2, 2, &BTreeSet::new()).unwrap());
        let mut checked_es = false;
        for seed in 0..20 {
            let inst = generate_instance(Arc::clone(&g), seed);
            let r = brute_force(&inst).unwrap();
            let n = inst.n();
            let mut es = None;
            for mask in 0..(1u32 << n) {
                let cfg = SpinConfig {
                    spins: (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect(),
                };
                if energy(&inst, &cfg).unwrap() == r.e0 + 2.0 {
                    es = Some(cfg);
                    break;
                }
            }
            let labels =
                excitation_gap_states(&inst, &[r.witness.clone(), r.witness.flipped()], r.e0)
                    .unwrap();
            assert_eq!(labels, vec![StateLabel::Gs, StateLabel::Gs]);
            if let Some(es) = es {
                let l = excitation_gap_states(&inst, &[es], r.e0).unwrap();
                assert_eq!(l, vec![StateLabel::Es]);
                checked_es = true;
                break;
            }
        }
        assert!(checked_es, "no seed produced an E0+2 state");
    }

    #[test]
    fn labeling_requires_pm1() {
        let g = Arc::new(build_chimera(1, 1, 2, &BTreeSet::new()).unwrap());
        let mut inst = generate_instance(g, 3);
        inst.couplings[0] = 0.7;
        assert_eq!(
            excitation_gap_states(&inst, &[], -1.0),
            Err(ExactError::NotPlusMinusOne)
        );
    }
}
