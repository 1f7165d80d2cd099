//! A non-monotone tabulated kernel, its running minimum and its monotone
//! envelope.

use flockdelay::InfluenceFunction;

fn main() -> flockdelay::Result<()> {
    let bump = InfluenceFunction::tabulated(&[(0.0, 1.0), (1.0, 0.3), (2.0, 0.8), (3.0, 0.2), (5.0, 0.1)])?;
    let env = bump.monotone_envelope(5.0)?;
    let rearranged = bump.rearrangement(5.0, 0.01)?;
    println!("nonincreasing: {}", bump.is_nonincreasing());
    println!("{:>5} {:>8} {:>8} {:>8} {:>8}", "r", "psi", "min", "env", "rearr");
    for k in 0..=10 {
        let r = 0.5 * k as f64;
        println!(
            "{r:>5.1} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            bump.value(r),
            bump.running_min(r),
            env.value(r),
            rearranged.value(r)
        );
    }
    Ok(())
}
