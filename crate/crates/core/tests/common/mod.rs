//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here goes through the tape: the forward passes are written out
//! with plain loops so they can serve as oracles for it.

#![allow(dead_code)]

pub mod affine;

use fairaudit::data::{Dataset, Split};
use fairaudit::nn::{Architecture, Network};
use fairaudit::tape::Tape;
use fairaudit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Objective differentiated by the gradient checks.
#[derive(Debug, Clone, Copy)]
pub enum Objective {
    /// The first output probability.
    Output,
    /// Binary cross-entropy of the first output against `y`.
    Bce(f64),
}

/// Scalar objective for one input row plus the sign of every ReLU input.
pub fn reference_forward(arch: &Architecture, params: &[Vec<f64>], x: &[f64], obj: Objective) -> (f64, Vec<bool>) {
    let mut pattern = Vec::new();
    let p = match arch {
        Architecture::Dense { hidden, .. } => {
            let mut h = x.to_vec();
            let mut layer = 0;
            for &width in hidden {
                let (w, b) = (&params[2 * layer], &params[2 * layer + 1]);
                let next: Vec<f64> = (0..width)
                    .map(|j| b[j] + h.iter().enumerate().map(|(i, hi)| hi * w[i * width + j]).sum::<f64>())
                    .collect();
                pattern.extend(next.iter().map(|&z| z > 0.0));
                h = next.into_iter().map(|z| z.max(0.0)).collect();
                layer += 1;
            }
            let (w, b) = (&params[2 * layer], &params[2 * layer + 1]);
            let outs = b.len();
            let z = b[0] + h.iter().enumerate().map(|(i, hi)| hi * w[i * outs]).sum::<f64>();
            sig(z)
        }
        Architecture::Conv { filters, kernel_width } => {
            let k = *kernel_width;
            let pad = (k - 1) / 2;
            let len = x.len();
            let mut h: Vec<Vec<f64>> = vec![x.to_vec()];
            for (layer, &c_out) in filters.iter().enumerate() {
                let (w, b) = (&params[2 * layer], &params[2 * layer + 1]);
                let c_in = h.len();
                let mut out = vec![vec![0.0; len]; c_out];
                for (o, row) in out.iter_mut().enumerate() {
                    for (t, cell) in row.iter_mut().enumerate() {
                        let mut acc = b[o];
                        for (c, hc) in h.iter().enumerate() {
                            for j in 0..k {
                                let src = t as isize + j as isize - pad as isize;
                                if src >= 0 && (src as usize) < len {
                                    acc += w[(o * c_in + c) * k + j] * hc[src as usize];
                                }
                            }
                        }
                        *cell = acc;
                    }
                }
                if layer + 1 < filters.len() {
                    for row in &mut out {
                        for v in row.iter_mut() {
                            pattern.push(*v > 0.0);
                            *v = v.max(0.0);
                        }
                    }
                }
                h = out;
            }
            sig(h[0].iter().sum::<f64>() / len as f64)
        }
    };
    let value = match obj {
        Objective::Output => p,
        Objective::Bce(y) => -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
    };
    (value, pattern)
}

/// Tape gradients of the objective for one row: `(input grad, weight grads)`.
pub fn tape_gradients(net: &Network, x: &[f64], obj: Objective) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, true);
    let xv = tape.leaf(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap(), true);
    let y = net.forward(&mut tape, &params, xv, None).unwrap();
    let out = match obj {
        Objective::Output => {
            let first = if net.outputs() == 1 { y } else { unimplemented!("single-output objective") };
            tape.sum(first).unwrap()
        }
        Objective::Bce(t) => tape.bce_mean(y, vec![t]).unwrap(),
    };
    let value = tape.value(out).item().unwrap();
    tape.backward(out).unwrap();
    let gx = tape.grad(xv).unwrap().data().to_vec();
    let gw = params.iter().map(|v| tape.grad(*v).unwrap().data().to_vec()).collect();
    (value, gx, gw)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckStats {
    pub components: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub failures: usize,
}

pub const ABS_TOL: f64 = 1e-7;
pub const REL_TOL: f64 = 1e-4;

pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    let abs = (analytic - numeric).abs();
    abs <= ABS_TOL || abs / analytic.abs().max(numeric.abs()) <= REL_TOL
}

/// Central difference of `f` at `v` along one coordinate. The step shrinks
/// until neither probe crosses a ReLU kink relative to the base point.
fn central_difference(mut f: impl FnMut(f64) -> (f64, Vec<bool>), v: f64) -> f64 {
    let (_, base) = f(v);
    let mut h = 1e-5 * v.abs().max(1.0);
    loop {
        let (plus, pp) = f(v + h);
        let (minus, pm) = f(v - h);
        if (pp == base && pm == base) || h < 1e-10 {
            return (plus - minus) / (2.0 * h);
        }
        h /= 4.0;
    }
}

/// Checks every input and weight component of `net` at `x` against central
/// differences of [`reference_forward`].
pub fn check_network(net: &Network, x: &[f64], obj: Objective, stats: &mut GradCheckStats) {
    let arch = net.architecture().clone();
    let params: Vec<Vec<f64>> = net.params().iter().map(|p| p.tensor.data().to_vec()).collect();
    let (tape_value, gx, gw) = tape_gradients(net, x, obj);
    let (ref_value, _) = reference_forward(&arch, &params, x, obj);
    assert!(
        (tape_value - ref_value).abs() <= 1e-12 * ref_value.abs().max(1.0),
        "forward mismatch: tape {tape_value} vs reference {ref_value}"
    );

    let mut record = |a: f64, n: f64| {
        let abs = (a - n).abs();
        stats.components += 1;
        stats.max_abs_err = stats.max_abs_err.max(abs);
        if a.abs().max(n.abs()) > 1e-6 {
            stats.max_rel_err = stats.max_rel_err.max(abs / a.abs().max(n.abs()));
        }
        if !within_tolerance(a, n) {
            stats.failures += 1;
        }
    };

    for i in 0..x.len() {
        let n = central_difference(
            |v| {
                let mut xp = x.to_vec();
                xp[i] = v;
                reference_forward(&arch, &params, &xp, obj)
            },
            x[i],
        );
        record(gx[i], n);
    }
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let n = central_difference(
                |v| {
                    let mut pp = params.clone();
                    pp[pi][k] = v;
                    reference_forward(&arch, &pp, x, obj)
                },
                p[k],
            );
            record(gw[pi][k], n);
        }
    }
}

/// A small random member of either family.
pub fn random_architecture(r: &mut impl Rng, conv: bool) -> (Architecture, usize) {
    let input_dim = r.random_range(2..=8);
    let layers = r.random_range(1..=3);
    let arch = if conv {
        let mut filters: Vec<usize> = (0..layers).map(|_| r.random_range(1..=6)).collect();
        *filters.last_mut().unwrap() = 1;
        Architecture::Conv {
            filters,
            kernel_width: [1, 3, 5][r.random_range(0..3)],
        }
    } else {
        Architecture::Dense {
            hidden: (0..layers).map(|_| r.random_range(1..=16)).collect(),
            outputs: 1,
            dropout: 0.0,
        }
    };
    (arch, input_dim)
}

/// Runs `cases` random (architecture, input) checks, alternating families
/// and objectives.
pub fn gradient_oracle(cases: usize, seed: u64) -> GradCheckStats {
    let mut r = rng(seed);
    let mut stats = GradCheckStats::default();
    for case in 0..cases {
        let (arch, d) = random_architecture(&mut r, case % 2 == 1);
        let net = Network::init(arch, d, r.random()).unwrap();
        let scale = [0.5, 1.0, 3.0][r.random_range(0..3)];
        let x: Vec<f64> = (0..d).map(|_| scale * normal(&mut r)).collect();
        let obj = if case % 4 < 2 {
            Objective::Output
        } else {
            Objective::Bce(f64::from(r.random_range(0..2u8)))
        };
        check_network(&net, &x, obj, &mut stats);
    }
    stats
}

/// Brute-force group metrics: `(DI, SPD, EOD, AOD)`, `None` where a
/// denominator is zero.
pub fn brute_force_metrics(
    predicted: &[bool],
    actual: &[bool],
    privileged: &[bool],
) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let rate = |group: bool, cond: &dyn Fn(usize) -> bool| -> Option<f64> {
        let idx: Vec<usize> = (0..predicted.len()).filter(|&i| privileged[i] == group && cond(i)).collect();
        if idx.is_empty() {
            None
        } else {
            Some(idx.iter().filter(|&&i| predicted[i]).count() as f64 / idx.len() as f64)
        }
    };
    let all = |_: usize| true;
    let pos = |i: usize| actual[i];
    let neg = |i: usize| !actual[i];
    let (pp, pu) = (rate(true, &all), rate(false, &all));
    let di = match (pu, pp) {
        (Some(u), Some(p)) if p > 0.0 => Some(u / p),
        _ => None,
    };
    let spd = pu.zip(pp).map(|(u, p)| u - p);
    let eod = rate(false, &pos).zip(rate(true, &pos)).map(|(u, p)| u - p);
    let fpr_gap = rate(false, &neg).zip(rate(true, &neg)).map(|(u, p)| u - p);
    let aod = fpr_gap.zip(eod).map(|(f, t)| 0.5 * (f + t));
    (di, spd, eod, aod)
}

/// Mann–Whitney AUC by direct pairwise comparison, ties counted half.
pub fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut twice, mut p, mut n) = (0u64, 0u64, 0u64);
    for i in 0..scores.len() {
        if positive[i] {
            p += 1;
        } else {
            n += 1;
        }
    }
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        for j in (0..scores.len()).filter(|&j| !positive[j]) {
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Linearly separable rows with a noisy label, protected column at index 0.
pub fn separable_dataset(rows: usize, dim: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let w: Vec<f64> = (0..dim).map(|_| normal(&mut r)).collect();
    let mut data = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut x: Vec<f64> = (0..dim).map(|_| normal(&mut r)).collect();
        x[0] = f64::from(r.random_range(0..2u8));
        let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        labels.push(u8::from(s > 0.0));
        data.push(x);
    }
    Dataset::from_rows(Split::Train, &data, labels, 0).unwrap()
}

/// Label equals the protected column (index 0) with a little flip noise; the
/// other columns are weakly informative noise.
pub fn biased_dataset(rows: usize, dim: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let z = r.random_range(0..2u8);
        let y = if r.random::<f64>() < 0.1 { 1 - z } else { z };
        let mut x: Vec<f64> = (0..dim).map(|_| normal(&mut r)).collect();
        x[0] = f64::from(z);
        x[1] += 0.5 * f64::from(y);
        labels.push(y);
        data.push(x);
    }
    Dataset::from_rows(Split::Train, &data, labels, 0).unwrap()
}
