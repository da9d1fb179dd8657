//! Continuous-time Swendsen-Wang update for the long-range Ising chain that
//! the spin-boson path integral maps onto.
//!
//! One sweep:
//! 1. cut times are drawn from a Poisson process of rate Δ/2 on [0, β);
//! 2. cuts and kinks split the circle into segments of constant sign;
//! 3. every pair of equal-sign segments is bonded with probability
//!    `1 − exp(−2 J_ij)`, `J_ij = ∬ K` over the two segments;
//! 4. each connected cluster is flipped with probability ½;
//! 5. boundaries between equal signs are dropped, the rest become kinks.
//!
//! The stationary measure is `(Δ/2)^n exp(½∬σKσ) dτ₁…dτ_n`.

use rand::Rng;

use super::worldline::Worldline;
use crate::spectral::KernelTable;

/// Reusable buffers so that a sweep does not allocate.
#[derive(Debug, Default, Clone)]
pub struct ClusterScratch {
    cuts: Vec<f64>,
    bounds: Vec<f64>,
    is_kink: Vec<bool>,
    signs: Vec<i8>,
    parent: Vec<u32>,
    size: Vec<u32>,
    flip: Vec<i8>,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

fn union(parent: &mut [u32], size: &mut [u32], a: u32, b: u32) {
    let (big, small) = if size[a as usize] >= size[b as usize] { (a, b) } else { (b, a) };
    parent[small as usize] = big;
    size[big as usize] += size[small as usize];
}

/// Interaction of segment `i` with segment `j > i`. Segment `m − 1` wraps
/// through τ = β ≡ 0.
#[inline]
fn segment_coupling(table: &KernelTable, bounds: &[f64], beta: f64, i: usize, j: usize) -> f64 {
    let m = bounds.len();
    let (a, b) = (bounds[i], bounds[i + 1]);
    if j + 1 < m {
        table.pair_integral(a, b, bounds[j], bounds[j + 1])
    } else {
        table.pair_integral(a, b, bounds[m - 1], beta) + table.pair_integral(0.0, bounds[0], a, b)
    }
}

/// Performs one cluster sweep in place.
pub fn cluster_sweep<R: Rng + ?Sized>(
    wl: &mut Worldline,
    table: &KernelTable,
    delta: f64,
    rng: &mut R,
    scratch: &mut ClusterScratch,
) {
    let beta = wl.beta;
    let rate = 0.5 * delta;

    scratch.cuts.clear();
    if rate > 0.0 {
        let mut t = 0.0;
        loop {
            // Exponential gap; 1 − U avoids ln(0).
            t += -(1.0 - rng.gen::<f64>()).ln() / rate;
            if t >= beta {
                break;
            }
            scratch.cuts.push(t);
        }
    }

    // Merge the two sorted boundary lists.
    scratch.bounds.clear();
    scratch.is_kink.clear();
    {
        let (kinks, cuts) = (&wl.kinks, &scratch.cuts);
        let (mut i, mut j) = (0, 0);
        while i < kinks.len() || j < cuts.len() {
            let take_kink = j >= cuts.len() || (i < kinks.len() && kinks[i] <= cuts[j]);
            if take_kink {
                scratch.bounds.push(kinks[i]);
                scratch.is_kink.push(true);
                i += 1;
            } else {
                scratch.bounds.push(cuts[j]);
                scratch.is_kink.push(false);
                j += 1;
            }
        }
    }

    let m = scratch.bounds.len();
    if m == 0 {
        if rng.gen::<bool>() {
            wl.base_sign = -wl.base_sign;
        }
        return;
    }

    // Segment j starts at bounds[j]; segment m−1 wraps around to bounds[0].
    scratch.signs.clear();
    let mut s = wl.base_sign;
    for &k in &scratch.is_kink {
        if k {
            s = -s;
        }
        scratch.signs.push(s);
    }

    scratch.parent.clear();
    scratch.parent.extend(0..m as u32);
    scratch.size.clear();
    scratch.size.resize(m, 1);

    if !table.is_zero() {
        let bounds = &scratch.bounds;
        let signs = &scratch.signs;
        for i in 0..m - 1 {
            for j in i + 1..m {
                if signs[i] != signs[j] {
                    continue;
                }
                let ri = find(&mut scratch.parent, i as u32);
                let rj = find(&mut scratch.parent, j as u32);
                if ri == rj {
                    // Already connected: the bond cannot change the clusters.
                    continue;
                }
                let coupling = segment_coupling(table, bounds, beta, i, j);
                if coupling <= 0.0 {
                    continue;
                }
                let p = -(-2.0 * coupling).exp_m1();
                if rng.gen::<f64>() < p {
                    union(&mut scratch.parent, &mut scratch.size, ri, rj);
                }
            }
        }
    }

    // Flip decision per cluster root, drawn in segment order.
    scratch.flip.clear();
    scratch.flip.resize(m, 0);
    for i in 0..m {
        let r = find(&mut scratch.parent, i as u32) as usize;
        if scratch.flip[r] == 0 {
            scratch.flip[r] = if rng.gen::<bool>() { -1 } else { 1 };
        }
        scratch.signs[i] *= scratch.flip[r];
    }

    wl.kinks.clear();
    let signs = &scratch.signs;
    for j in 0..m {
        let prev = if j == 0 { signs[m - 1] } else { signs[j - 1] };
        if prev != signs[j] {
            wl.kinks.push(scratch.bounds[j]);
        }
    }
    wl.base_sign = signs[m - 1];
}
