use std::path::Path;

use tunnelkit::config;
use tunnelkit::pipeline::{interaction_at, Problem};

/// Over the shipped double-well sweep the Gram deviation of the cut-off
/// modes shrinks with hbar and stays under its envelope, and
/// ln|w~| + S/hbar varies only through the algebraic prefactor.
#[test]
fn gram_and_envelope_over_sweep() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("problems/double_well.tk");
    let p = Problem::new(config::load(&path).unwrap(), 1).unwrap();
    let sys = p.system().unwrap();
    let mut dev = Vec::new();
    let mut env = Vec::new();
    for &h in &p.hbars() {
        let (row, _) = interaction_at(&p, &sys, h).unwrap();
        let im = &row.matrix;
        assert!(im.gram_deviation <= im.gram_envelope, "hbar {h}: {} > {}", im.gram_deviation, im.gram_envelope);
        dev.push(im.gram_deviation);
        let w = im.m_tilde[0][1].abs();
        env.push(w.ln() + sys.s0 / h - 0.5 * h.ln());
    }
    assert!(dev.windows(2).all(|d| d[1] < d[0]), "{dev:?}");
    let lo = env.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = env.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 0.1, "{env:?}");
}
