//! Recover a degradation kernel two ways: the non-blind least-squares
//! oracle (sees the LR-HR pair) and the blind cross-scale recurrence
//! estimator (sees only the LR image).
//!
//! Run with: cargo run --release --example estimate_kernel

use kernelsr::degrade::degrade;
use kernelsr::kernelest::{
    estimate_kernel_blind, estimate_kernel_nonblind, kernel_ncc, make_gaussian_kernel,
    GaussianKernelParams, KernelEstConfig,
};
use kernelsr::synth::dead_leaves;

fn main() -> kernelsr::Result<()> {
    let truth = make_gaussian_kernel(
        &GaussianKernelParams::new(2.0, 1.0, std::f64::consts::PI / 4.0)?,
        33,
    )?;

    // non-blind: small image suffices
    let hr = dead_leaves(128, 128, 3, 0.02);
    let lr = degrade(&hr, &truth, 2, None, 0)?;
    let oracle = estimate_kernel_nonblind(&hr, &lr, 2, 33, 1e-8)?;
    let l2: f64 = oracle
        .weights()
        .iter()
        .zip(truth.weights())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    println!("non-blind oracle: L2 error {l2:.2e}, NCC {:.5}", kernel_ncc(&oracle, &truth));

    // blind: needs at least 8x the kernel size per side
    let hr_large = dead_leaves(544, 544, 4, 0.0);
    let lr_large = degrade(&hr_large, &truth, 2, None, 0)?;
    let cfg = KernelEstConfig { seed: 1, ..Default::default() };
    let t0 = std::time::Instant::now();
    let blind = estimate_kernel_blind(&lr_large, &cfg)?;
    println!(
        "blind estimate:   NCC {:.4} in {:.1}s ({} evaluation budget)",
        kernel_ncc(&blind, &truth),
        t0.elapsed().as_secs_f64(),
        cfg.max_evals
    );
    Ok(())
}
