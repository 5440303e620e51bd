//! Leakage auditing for published model fronts.
//!
//! When a convolution front end is published, every kernel placement that
//! overlaps a target patch hands an adversary one linear equation over the
//! patch's pixels. Publishing stays safe while the unknowns outnumber the
//! equations. This module provides the closed-form worst-case counts, an
//! honest brute-force enumerator to sanity-check them, and (in [`linsys`])
//! the concrete reconstruction attack for dense fronts.

mod linsys;

pub use linsys::{
    build_attack_system, cramer_solve, reconstruction_attack, solve_or_refute, AttackOutcome,
    AttackVerdict, LinearSystem, Unknown, Verdict, DEFAULT_RANK_TOL,
};
pub(crate) use linsys::solve_square as linsys_solve_square;

use crate::error::{Error, Result};
use std::collections::HashSet;

/// Convolution-front geometry: kernel height `n`, width `l`, input channels
/// `c`, kernel count `kc`, stride `s`.
///
/// The counting formulas assume the overlapping-shift regime `s ≤ n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelGeometry {
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub in_channels: usize,
    pub kernels: usize,
    pub stride: usize,
}

impl KernelGeometry {
    pub fn new(
        kernel_height: usize,
        kernel_width: usize,
        in_channels: usize,
        kernels: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel_height == 0 || kernel_width == 0 || in_channels == 0 || kernels == 0 || stride == 0
        {
            return Err(Error::Contract(
                "kernel geometry fields must all be positive".into(),
            ));
        }
        if stride > kernel_height {
            return Err(Error::Contract(format!(
                "stride {stride} exceeds kernel height {kernel_height}; the \
                 leakage formulas assume overlapping shifts"
            )));
        }
        Ok(Self {
            kernel_height,
            kernel_width,
            in_channels,
            kernels,
            stride,
        })
    }
}

/// Which unknown-counting formula to use.
///
/// The two genuinely disagree: `AsPrinted` counts one kernel-width row band,
/// `ExampleConsistent` counts the full two-dimensional covered patch across
/// channels. The two-dimensional count is the default because it is the one
/// consistent with counting equations over two axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeakageMode {
    /// Unknowns `N = ((n−s) + shifts·s) · l`.
    AsPrinted,
    /// Unknowns `N = ((n−s) + shifts·s)² · c`.
    #[default]
    ExampleConsistent,
}

/// Worst-case equation/unknown counts for one published front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakageReport {
    /// Leakage equations `M`.
    pub equations: u64,
    /// Unknowns `N`.
    pub unknowns: u64,
    pub mode: LeakageMode,
    /// `N > M`: the adversary's system stays underdetermined.
    pub secure: bool,
    /// Largest kernel count that keeps this geometry secure.
    pub max_safe_kernels: u64,
}

/// Kernel shift positions per axis that can overlap a fixed target patch:
/// `ceil(2n/s − 1)`.
fn shifts_per_axis(g: &KernelGeometry) -> u64 {
    ((2 * g.kernel_height - 1) / g.stride) as u64
}

fn unknown_count(g: &KernelGeometry, mode: LeakageMode) -> u64 {
    let span = (g.kernel_height - g.stride) as u64 + shifts_per_axis(g) * g.stride as u64;
    match mode {
        LeakageMode::AsPrinted => span * g.kernel_width as u64,
        LeakageMode::ExampleConsistent => span * span * g.in_channels as u64,
    }
}

/// Worst-case closed-form counts: `M = shifts² · kc` equations against the
/// mode's unknown count `N`; secure while `N > M`.
pub fn count_leakage(g: &KernelGeometry, mode: LeakageMode) -> LeakageReport {
    let shifts = shifts_per_axis(g);
    let equations = shifts * shifts * g.kernels as u64;
    let unknowns = unknown_count(g, mode);
    LeakageReport {
        equations,
        unknowns,
        mode,
        secure: unknowns > equations,
        max_safe_kernels: max_safe_kernels(g, mode),
    }
}

/// Largest kernel count `kc` with `N > shifts² · kc`; 0 when no positive
/// count is safe. `N` does not depend on `kc`, so the bound is exact.
pub fn max_safe_kernels(g: &KernelGeometry, mode: LeakageMode) -> u64 {
    let shifts = shifts_per_axis(g);
    (unknown_count(g, mode) - 1) / (shifts * shifts)
}

/// Top-left corner of the audited n×n input patch, in input cells. Must lie
/// on the kernel placement grid (multiples of the stride).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TargetRegion {
    pub row: usize,
    pub col: usize,
}

/// Brute-force count of what one scan actually leaks about the target patch.
///
/// Walks kernel placements forward from the patch's corner at stride `s`,
/// keeping every placement that still overlaps the patch; `equations` is
/// placements × kernel count, `unknowns` is the number of distinct covered
/// cells × channels. Placement counts are translation-invariant, so the
/// region's position only shifts which absolute cells are covered. The walk
/// scans forward from the patch (placements behind it belong to some other
/// patch's audit), which is what makes the closed-form counts upper bounds.
pub fn enumerate_leakage(g: &KernelGeometry, target: &TargetRegion) -> Result<(u64, u64)> {
    if !target.row.is_multiple_of(g.stride) || !target.col.is_multiple_of(g.stride) {
        return Err(Error::Contract(format!(
            "target region ({}, {}) is not aligned to the stride-{} placement grid",
            target.row, target.col, g.stride
        )));
    }
    let n = g.kernel_height;
    let l = g.kernel_width;
    let s = g.stride;
    let mut placements = 0u64;
    let mut covered: HashSet<(usize, usize)> = HashSet::new();
    let mut dy = 0;
    while dy < n {
        let mut dx = 0;
        while dx < n {
            placements += 1;
            for r in 0..n {
                for c in 0..l {
                    covered.insert((target.row + dy + r, target.col + dx + c));
                }
            }
            dx += s;
        }
        dy += s;
    }
    Ok((
        placements * g.kernels as u64,
        covered.len() as u64 * g.in_channels as u64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alexnet_conv1(kernels: usize) -> KernelGeometry {
        KernelGeometry::new(11, 11, 3, kernels, 4).unwrap()
    }

    #[test]
    fn geometry_validation_rejects_zero_fields_and_long_strides() {
        assert!(matches!(
            KernelGeometry::new(0, 3, 1, 1, 1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            KernelGeometry::new(3, 3, 1, 0, 1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            KernelGeometry::new(3, 3, 1, 1, 4),
            Err(Error::Contract(_))
        ));
        assert!(KernelGeometry::new(3, 3, 1, 1, 3).is_ok());
    }

    #[test]
    fn counts_match_the_96_kernel_worked_example() {
        let report = count_leakage(&alexnet_conv1(96), LeakageMode::ExampleConsistent);
        assert_eq!(report.equations, 2400);
        assert_eq!(report.unknowns, 2187);
        assert!(!report.secure);
        assert_eq!(report.max_safe_kernels, 87);
    }

    #[test]
    fn dropping_to_64_kernels_turns_the_geometry_secure() {
        let report = count_leakage(&alexnet_conv1(64), LeakageMode::ExampleConsistent);
        assert_eq!(report.equations, 1600);
        assert_eq!(report.unknowns, 2187);
        assert!(report.secure);
    }

    #[test]
    fn printed_mode_counts_a_single_row_band() {
        let report = count_leakage(&alexnet_conv1(96), LeakageMode::AsPrinted);
        assert_eq!(report.unknowns, 297); // 27 · 11
        assert!(!report.secure);
    }

    #[test]
    fn non_overlapping_stride_degenerates_to_one_shift() {
        let g = KernelGeometry::new(5, 5, 2, 7, 5).unwrap();
        let report = count_leakage(&g, LeakageMode::ExampleConsistent);
        assert_eq!(report.equations, 7); // shifts = 1
        assert_eq!(report.unknowns, 50); // n²·c
        assert!(report.secure);
    }

    #[test]
    fn max_safe_kernels_matches_the_strict_inequality() {
        assert_eq!(
            max_safe_kernels(&alexnet_conv1(96), LeakageMode::ExampleConsistent),
            87 // 2187 / 25 = 87.48, strict
        );
        // Exactly divisible: N = 50, shifts² = 25 → kc < 2.
        let g = KernelGeometry::new(5, 5, 2, 1, 5).unwrap();
        let divisible = KernelGeometry::new(5, 5, 2, 1, 5).unwrap();
        assert_eq!(count_leakage(&g, LeakageMode::ExampleConsistent).unknowns, 50);
        assert_eq!(shifts_per_axis(&divisible), 1);
        // With shifts = 1, N = 50 → max safe is 49 (50 not allowed: 50 > 50 fails).
        assert_eq!(max_safe_kernels(&g, LeakageMode::ExampleConsistent), 49);
        // No safe kernel count at all: N ≤ shifts².
        let tiny = KernelGeometry::new(2, 1, 1, 1, 1).unwrap();
        let printed = count_leakage(&tiny, LeakageMode::AsPrinted);
        assert_eq!(printed.unknowns, 4); // (1 + 3)·1
        assert_eq!(printed.equations, 9); // 3²·1
        assert_eq!(printed.max_safe_kernels, 0);
        assert!(!printed.secure);
    }

    #[test]
    fn safe_boundary_is_tight_across_a_geometry_sweep() {
        for n in 2..=12usize {
            for s in 1..=n {
                for c in 1..=3usize {
                    let probe = KernelGeometry::new(n, n, c, 1, s).unwrap();
                    for mode in [LeakageMode::AsPrinted, LeakageMode::ExampleConsistent] {
                        let kc_star = max_safe_kernels(&probe, mode);
                        if kc_star > 0 {
                            let at = KernelGeometry::new(n, n, c, kc_star as usize, s).unwrap();
                            assert!(count_leakage(&at, mode).secure, "{n} {s} {c} {mode:?}");
                        }
                        let beyond =
                            KernelGeometry::new(n, n, c, kc_star as usize + 1, s).unwrap();
                        assert!(!count_leakage(&beyond, mode).secure, "{n} {s} {c} {mode:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_footprint_enumeration_is_exact() {
        let g = KernelGeometry::new(3, 3, 1, 1, 3).unwrap();
        let (equations, unknowns) = enumerate_leakage(&g, &TargetRegion::default()).unwrap();
        assert_eq!(equations, 1);
        assert_eq!(unknowns, 9);
    }

    #[test]
    fn enumeration_of_the_conv1_geometry_stays_below_the_closed_forms() {
        let g = alexnet_conv1(96);
        let (equations, unknowns) = enumerate_leakage(&g, &TargetRegion::default()).unwrap();
        // ceil(11/4) = 3 placements per axis; span 2·4 + 11 = 19.
        assert_eq!(equations, 9 * 96);
        assert_eq!(unknowns, 19 * 19 * 3);
        let report = count_leakage(&g, LeakageMode::ExampleConsistent);
        assert!(equations <= report.equations);
        assert!(unknowns <= report.unknowns);
    }

    #[test]
    fn equations_scale_with_kernel_count_and_unknowns_do_not() {
        let single = KernelGeometry::new(5, 5, 2, 3, 2).unwrap();
        let double = KernelGeometry::new(5, 5, 2, 6, 2).unwrap();
        let origin = TargetRegion::default();
        let (e1, u1) = enumerate_leakage(&single, &origin).unwrap();
        let (e2, u2) = enumerate_leakage(&double, &origin).unwrap();
        assert_eq!(e2, 2 * e1);
        assert_eq!(u2, u1);
    }

    #[test]
    fn enumeration_counts_are_translation_invariant() {
        let g = KernelGeometry::new(4, 4, 2, 5, 2).unwrap();
        let at_origin = enumerate_leakage(&g, &TargetRegion::default()).unwrap();
        let shifted = enumerate_leakage(&g, &TargetRegion { row: 6, col: 10 }).unwrap();
        assert_eq!(at_origin, shifted);
        assert!(matches!(
            enumerate_leakage(&g, &TargetRegion { row: 3, col: 0 }),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn closed_forms_dominate_enumeration_across_the_sweep() {
        let origin = TargetRegion::default();
        for n in 2..=12usize {
            for s in 1..=n {
                for kc in 1..=8usize {
                    for c in 1..=3usize {
                        let g = KernelGeometry::new(n, n, c, kc, s).unwrap();
                        let report = count_leakage(&g, LeakageMode::ExampleConsistent);
                        let (equations, unknowns) = enumerate_leakage(&g, &origin).unwrap();
                        assert!(
                            equations <= report.equations,
                            "equations: n={n} s={s} kc={kc} c={c}: {equations} > {}",
                            report.equations
                        );
                        assert!(
                            unknowns <= report.unknowns,
                            "unknowns: n={n} s={s} kc={kc} c={c}: {unknowns} > {}",
                            report.unknowns
                        );
                    }
                }
            }
        }
    }
}
