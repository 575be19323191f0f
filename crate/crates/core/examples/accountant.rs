//! Compose Gaussian events, cap a stream of releases, write a ledger and
//! audit it.

use csi_dp::accountant::{audit_ledger, enforce_cap, AccountantState, CapDecision, CapPolicy, GaussianEvent, LedgerWriter};

fn main() -> csi_dp::Result<()> {
    let delta = 1e-5;
    let mut one = AccountantState::new(delta);
    one.compose(&[GaussianEvent::new(1.0, 1.0)?]);
    println!("one event sigma=1: eps = {:.4} at alpha {}", one.epsilon(), one.optimal_alpha());

    // A window released every minute with 17 block events of sigma 40.
    let per_window: Vec<GaussianEvent> = (0..17).map(|_| GaussianEvent::new(40.0, 2.0)).collect::<Result<_, _>>()?;
    let cap = 4.0;
    let mut state = AccountantState::new(delta).with_cap(cap);
    let dir = std::env::temp_dir().join("csi-dp-accountant-example");
    std::fs::create_dir_all(&dir).map_err(|e| csi_dp::Error::Io { path: dir.clone(), source: e })?;
    let ledger_path = dir.join("ledger.csv");
    let mut ledger = LedgerWriter::create(&ledger_path, &state.curve.alphas, delta)?;

    let mut released = 0;
    for minute in 0..10_000 {
        match enforce_cap(&state, &per_window, CapPolicy::Stop) {
            CapDecision::Release => {
                state.compose(&per_window);
                for e in &per_window {
                    ledger.record(e, minute as f64)?;
                }
                released += 1;
            }
            _ => break,
        }
    }
    ledger.flush()?;
    println!("released {released} windows before the cap of {cap}: eps = {:.6}", state.epsilon());
    println!("audit from {}: eps = {:.6}", ledger_path.display(), audit_ledger(&ledger_path)?);
    Ok(())
}
