//! Ablation variants: one component removed at a time, plus a sweep over
//! the rejected-penalty exponent.

use alloc::vec::Vec;

use crate::objective::SlimeHyperParams;

pub const EXPONENT_SWEEP: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariant {
    /// Short identifier used in file names.
    pub id: &'static str,
    pub label: &'static str,
    pub hp: SlimeHyperParams,
}

pub fn ablation_variants(base: &SlimeHyperParams) -> Vec<AblationVariant> {
    let mut out = Vec::with_capacity(5 + EXPONENT_SWEEP.len());
    out.push(AblationVariant {
        id: "full",
        label: "Full SLIME",
        hp: *base,
    });
    out.push(AblationVariant {
        id: "no_chosen",
        label: "w/o chosen term",
        hp: SlimeHyperParams {
            enable_chosen: false,
            ..*base
        },
    });
    out.push(AblationVariant {
        id: "no_rejected",
        label: "w/o rejected term",
        hp: SlimeHyperParams {
            enable_rejected: false,
            ..*base
        },
    });
    out.push(AblationVariant {
        id: "no_soft_margin",
        label: "w/o soft distance margin",
        hp: SlimeHyperParams {
            enable_soft: false,
            ..*base
        },
    });
    out.push(AblationVariant {
        id: "no_hard_margin",
        label: "w/o hard margin",
        hp: SlimeHyperParams {
            enable_hard: false,
            ..*base
        },
    });
    const SWEEP_IDS: [&str; 5] = ["p1.0", "p1.5", "p2.0", "p2.5", "p3.0"];
    const SWEEP_LABELS: [&str; 5] = ["p = 1.0", "p = 1.5", "p = 2.0", "p = 2.5", "p = 3.0"];
    for ((&p, id), label) in EXPONENT_SWEEP.iter().zip(SWEEP_IDS).zip(SWEEP_LABELS) {
        out.push(AblationVariant {
            id,
            label,
            hp: SlimeHyperParams { p, ..*base },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_set() {
        let v = ablation_variants(&SlimeHyperParams::default());
        let labels: Vec<_> = v.iter().map(|x| x.label).collect();
        assert_eq!(
            labels,
            [
                "Full SLIME",
                "w/o chosen term",
                "w/o rejected term",
                "w/o soft distance margin",
                "w/o hard margin",
                "p = 1.0",
                "p = 1.5",
                "p = 2.0",
                "p = 2.5",
                "p = 3.0"
            ]
        );
        let ps: Vec<f64> = v[5..].iter().map(|x| x.hp.p).collect();
        assert_eq!(ps, EXPONENT_SWEEP);
        assert!(!v[1].hp.enable_chosen && v[1].hp.enable_rejected);
        assert!(!v[4].hp.enable_hard && v[4].hp.enable_soft);
    }
}
