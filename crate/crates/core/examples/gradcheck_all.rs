//! Finite-difference check of every component, as `txspot gradcheck` runs it.

use txspot::selfcheck::{check, default_options, Component};

fn main() -> txspot::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut ok = true;
    for c in Component::ALL {
        let r = check(c, seed, default_options())?;
        let checked: usize = r.tensors.iter().map(|t| t.checked).sum();
        println!("{:<9} {:>3} tensors {:>5} elements  max rel error {:.2e}  {}", c.name(), r.tensors.len(), checked, r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
        ok &= r.passed;
    }
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
