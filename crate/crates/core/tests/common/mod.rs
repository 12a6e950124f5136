#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use solar_coverage::kriging::{gram, KernelParams, Sample, SampleBuffer, SpatioTemporalPoint};

/// A random weight problem: buffer, query and kernel parameters.
pub struct Instance {
    pub buffer: SampleBuffer,
    pub z: SpatioTemporalPoint,
    pub kp: KernelParams,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_n: usize, beta: (f64, f64)) -> Instance {
    let n = rng.gen_range(1..=max_n);
    let kp = KernelParams {
        sigma: rng.gen_range(0.2..1.0),
        tau: rng.gen_range(0.5..3.0),
        beta: rng.gen_range(beta.0..beta.1),
    };
    let samples = (0..n)
        .map(|_| Sample {
            z: SpatioTemporalPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0..6) as f64),
            cf: rng.gen_range(0.0..1.0),
        })
        .collect();
    let z = SpatioTemporalPoint::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(0.0..7.0));
    Instance { buffer: SampleBuffer::from_samples(samples).unwrap(), z, kp }
}

/// `J(λ) = βλᵀλ + λᵀKλ − 2kᵀλ + 1`.
pub fn objective(lambda: &DVector<f64>, k_mat: &DMatrix<f64>, k_vec: &DVector<f64>, beta: f64) -> f64 {
    beta * lambda.dot(lambda) + lambda.dot(&(k_mat * lambda)) - 2.0 * k_vec.dot(lambda) + 1.0
}

/// Derivative-free minimisation of `J` over `1ᵀλ = 1`: the last weight is
/// eliminated and a full `3^(N-1)` stencil is searched, halving the step
/// whenever the centre wins, down to `min_step`.
pub fn brute_force(inst: &Instance, min_step: f64) -> (DVector<f64>, f64) {
    let k_mat = gram(&inst.buffer, &inst.kp).unwrap();
    let pts = inst.buffer.points();
    let k_vec = DVector::from_iterator(pts.len(), pts.iter().map(|p| solar_coverage::kriging::kernel(&inst.z, p, &inst.kp)));
    let n = pts.len();
    let lift = |x: &[f64]| {
        let mut l = DVector::zeros(n);
        for (i, v) in x.iter().enumerate() {
            l[i] = *v;
        }
        l[n - 1] = 1.0 - x.iter().sum::<f64>();
        l
    };
    let f = |x: &[f64]| objective(&lift(x), &k_mat, &k_vec, inst.kp.beta);
    let d = n - 1;
    let mut x = vec![1.0 / n as f64; d];
    let mut best = f(&x);
    let mut step = 1.0;
    let stencil = 3usize.pow(d as u32);
    while step >= min_step {
        let mut improved = false;
        let mut cand = x.clone();
        for code in 0..stencil {
            let mut c = code;
            let mut y = x.clone();
            for yi in y.iter_mut() {
                *yi += (c % 3) as f64 * step - step;
                c /= 3;
            }
            let v = f(&y);
            if v < best {
                best = v;
                cand = y;
                improved = true;
            }
        }
        if improved {
            x = cand;
        } else {
            step *= 0.5;
        }
    }
    (lift(&x), best)
}
