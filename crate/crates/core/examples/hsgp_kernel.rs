//! How closely the Hilbert-space basis reproduces the Matérn 3/2 kernel for a
//! few basis sizes and length scales.

use strainfield::hsgp::{approx_kernel, matern32_kernel_exact, HsgpBasis, KernelHyper};

fn main() -> strainfield::Result<()> {
    let grid: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    println!("{:>6} {:>10} {:>10} {:>10}", "ell", "M=10", "M=40", "M=80");
    for ell in [0.25, 0.5, 1.0, 2.0] {
        let hyper = KernelHyper::new(1.0, ell)?;
        let mut row = format!("{ell:>6}");
        for m in [10, 40, 80] {
            let basis = HsgpBasis::new(3.0, m)?;
            let mut worst: f64 = 0.0;
            for &a in &grid {
                for &b in &grid {
                    let err = approx_kernel(a, b, &basis, &hyper)? - matern32_kernel_exact(a, b, &hyper);
                    worst = worst.max(err.abs());
                }
            }
            row += &format!(" {worst:>10.4}");
        }
        println!("{row}");
    }
    Ok(())
}
