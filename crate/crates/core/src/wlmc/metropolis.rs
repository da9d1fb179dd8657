//! Local kink-pair insertion/removal. Used as an independent update family to
//! cross-check the cluster sweep; both leave the same measure invariant.
//!
//! Insertion picks two uniform times and flips the arc running forward from
//! the first to the second (wrapping through β if needed); it is rejected if
//! the arc contains a kink. Removal picks one of the n arcs between
//! cyclically adjacent kinks and flips it back.

use rand::Rng;

use super::worldline::Worldline;
use crate::spectral::KernelTable;

/// Linear pieces of an arc on the circle.
fn arc_pieces(start: f64, end: f64, beta: f64) -> ([(f64, f64); 2], usize) {
    if start < end {
        ([(start, end), (0.0, 0.0)], 1)
    } else {
        ([(start, beta), (0.0, end)], 2)
    }
}

fn linear_pair(table: &KernelTable, p: (f64, f64), q: (f64, f64)) -> f64 {
    if p.1 <= q.0 {
        table.pair_integral(p.0, p.1, q.0, q.1)
    } else {
        table.pair_integral(q.0, q.1, p.0, p.1)
    }
}

/// ∫_A dτ ∫_{circle∖A} dτ' σ(τ') K(τ − τ'), where the arc A is assumed
/// kink-free in its interior.
fn arc_field(wl: &Worldline, table: &KernelTable, start: f64, end: f64) -> f64 {
    let beta = wl.beta;
    let (arc, n_arc) = arc_pieces(start, end, beta);
    let arc = &arc[..n_arc];
    let inside = |t: f64| {
        if start < end {
            t > start && t < end
        } else {
            t > start || t < end
        }
    };

    // Boundaries of the complement: existing kinks plus the arc endpoints.
    let mut cuts: Vec<(f64, bool)> = wl.kinks.iter().map(|&k| (k, true)).collect();
    for t in [start, end] {
        if !wl.kinks.contains(&t) {
            cuts.push((t, false));
        }
    }
    cuts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut total = 0.0;
    let mut sign = wl.base_sign as f64;
    let mut prev = 0.0;
    let mut emit = |lo: f64, hi: f64, s: f64| {
        if hi > lo && !inside(0.5 * (lo + hi)) {
            for &a in arc {
                total += s * linear_pair(table, a, (lo, hi));
            }
        }
    };
    for &(t, is_kink) in &cuts {
        emit(prev, t, sign);
        if is_kink {
            sign = -sign;
        }
        prev = t;
    }
    emit(prev, beta, sign);
    total
}

/// One Metropolis proposal; returns whether it was accepted.
pub fn metropolis_kink_pair<R: Rng + ?Sized>(
    wl: &mut Worldline,
    table: &KernelTable,
    delta: f64,
    rng: &mut R,
) -> bool {
    let beta = wl.beta;
    let fugacity = 0.5 * delta * beta;
    if rng.gen::<bool>() {
        let start = rng.gen::<f64>() * beta;
        let end = rng.gen::<f64>() * beta;
        if start == end || wl.kinks.contains(&start) || wl.kinks.contains(&end) {
            return false;
        }
        let kink_inside = if start < end {
            wl.kinks.iter().any(|&k| k > start && k < end)
        } else {
            wl.kinks.iter().any(|&k| k > start || k < end)
        };
        if kink_inside {
            return false;
        }
        let n = wl.n_kinks();
        let s_arc = wl.sign_at(start) as f64;
        let d_log_w = -2.0 * s_arc * arc_field(wl, table, start, end);
        let ratio = fugacity * fugacity / (n + 2) as f64 * d_log_w.exp();
        if ratio >= 1.0 || rng.gen::<f64>() < ratio {
            let pos = wl.kinks.partition_point(|&k| k < start);
            wl.kinks.insert(pos, start);
            let pos = wl.kinks.partition_point(|&k| k < end);
            wl.kinks.insert(pos, end);
            if start > end {
                wl.base_sign = -wl.base_sign;
            }
            return true;
        }
        false
    } else {
        let n = wl.n_kinks();
        if n == 0 {
            return false;
        }
        let i = rng.gen_range(0..n);
        let (start, end) = (wl.kinks[i], wl.kinks[(i + 1) % n]);
        let s_arc = wl.sign_at(start) as f64;
        let d_log_w = -2.0 * s_arc * arc_field(wl, table, start, end);
        let ratio = if fugacity > 0.0 {
            n as f64 / (fugacity * fugacity) * d_log_w.exp()
        } else {
            f64::INFINITY
        };
        if ratio >= 1.0 || rng.gen::<f64>() < ratio {
            if i + 1 < n {
                wl.kinks.drain(i..i + 2);
            } else {
                wl.kinks.pop();
                wl.kinks.remove(0);
                wl.base_sign = -wl.base_sign;
            }
            return true;
        }
        false
    }
}

/// Proposals per Metropolis sweep at inverse temperature β and gap Δ.
pub fn proposals_per_sweep(beta: f64, delta: f64) -> usize {
    ((beta * delta).ceil() as usize).max(2)
}
