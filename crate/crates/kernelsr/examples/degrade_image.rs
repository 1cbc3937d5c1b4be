//! Synthesize an LR image: blur a textured HR image with an anisotropic
//! Gaussian kernel, downsample, and inject harvested noise patches.
//!
//! Run with: cargo run --release --example degrade_image

use kernelsr::degrade::{collect_noise_patches, degrade, write_kernel};
use kernelsr::image::save_image;
use kernelsr::kernelest::{make_gaussian_kernel, GaussianKernelParams};
use kernelsr::synth::dead_leaves;

fn main() -> kernelsr::Result<()> {
    let out = std::path::Path::new("target/examples-out/degrade");
    std::fs::create_dir_all(out).expect("create output dir");

    let hr = dead_leaves(256, 256, 42, 0.0);
    save_image(&hr, out.join("hr.pgm"))?;

    let kernel = make_gaussian_kernel(&GaussianKernelParams::new(2.4, 1.1, 0.6)?, 33)?;
    write_kernel(&kernel, out.join("kernel.srk"))?;

    // plain blur + stride-2 downsample
    let lr_clean = degrade(&hr, &kernel, 2, None, 7)?;
    save_image(&lr_clean, out.join("lr_clean.pgm"))?;

    // noise patches harvested from a flat-ish "real" image
    let sensor_like = dead_leaves(128, 128, 9, 0.015);
    let bank = collect_noise_patches(&[sensor_like], 16, 0.002)?;
    println!("harvested {} noise patches", bank.patches.len());

    let lr_noisy = degrade(&hr, &kernel, 2, Some(&bank), 7)?;
    save_image(&lr_noisy, out.join("lr_noisy.pgm"))?;

    println!(
        "wrote {}/hr.pgm, lr_clean.pgm, lr_noisy.pgm ({}x{})",
        out.display(),
        lr_clean.width(),
        lr_clean.height()
    );
    Ok(())
}
