//! Finite-difference check of every graph primitive and of one full
//! encoder/decoder cross-entropy step.

use image_transformer::numerics::gradcheck::CheckOptions;
use image_transformer::training::full_suite;

fn main() -> image_transformer::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let results = full_suite(seed, CheckOptions::default())?;
    for r in &results {
        println!(
            "{:<18} entries {:>5}  max rel err {:.3e}  {}",
            r.name,
            r.entries,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{failed} failing check(s)");
    Ok(())
}
