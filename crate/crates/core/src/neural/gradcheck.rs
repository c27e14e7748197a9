//! Central finite-difference verification of the analytic gradients, for
//! the whole network and for every layer type in isolation. Differences are
//! taken in double-double precision so that roundoff in the reference stays
//! far below the tolerance even for tiny gradient entries.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::layers::*;
use super::loss::loss;
use super::network::{
    backward, block_backward, block_forward, forward, forward_with, sppf_backward, sppf_forward, DetectionMap,
};
use super::real::{Real, Wide};
use super::weights::*;
use crate::error::Result;
use crate::rd_pipeline::GroundTruthFrame;
use crate::rng::{self, Purpose};

/// `|a − fd| / max(|a|, |fd|, 1e−8)`.
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter array.
    pub per_array: Vec<(String, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_array.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn total_loss<T: Real>(w: &ParamSet<T>, input: &Tensor<T>, truth: &GroundTruthFrame, l1: f64, l2: f64) -> Result<T> {
    let (map, _) = forward_with(input, w)?;
    Ok(loss(&map, truth, l1, l2)?.total)
}

/// Central difference `(f(x + ε) − f(x − ε)) / 2ε` of a scalar function of
/// one coordinate, evaluated in `T`.
fn central<T: Real>(orig: f64, eps: f64, mut f: impl FnMut(T) -> T) -> f64 {
    let e = T::from_f64(eps);
    let x = T::from_f64(orig);
    let lp = f(x + e);
    let lm = f(x - e);
    ((lp - lm) / (T::from_f64(2.0) * e)).to_f64()
}

/// Analytic parameter gradient of the detector loss.
pub fn analytic_gradient(w: &WeightSet, input: &Tensor, truth: &GroundTruthFrame, l1: f64, l2: f64) -> Result<WeightSet> {
    let (map, cache) = forward(input, w)?;
    let l = loss(&map, truth, l1, l2)?;
    backward(w, &cache, &l.grad)
}

/// Compare `analytic` against double-double central differences on up to
/// `per_array` randomly chosen entries of every parameter array.
#[allow(clippy::too_many_arguments)]
pub fn compare_with_fd(
    w: &WeightSet,
    analytic: &WeightSet,
    input: &Tensor,
    truth: &GroundTruthFrame,
    eps: f64,
    lambdas: (f64, f64),
    per_array: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    compare_with_fd_in::<Wide>(w, analytic, input, truth, eps, lambdas, per_array, seed)
}

/// [`compare_with_fd`] with the reference evaluated in scalar type `T`.
#[allow(clippy::too_many_arguments)]
pub fn compare_with_fd_in<T: Real>(
    w: &WeightSet,
    analytic: &WeightSet,
    input: &Tensor,
    truth: &GroundTruthFrame,
    eps: f64,
    lambdas: (f64, f64),
    per_array: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = rng::stream(seed, 0, Purpose::GradCheck);
    let x: Tensor<T> = input.cast();
    let mut probe = ParamSet::<T>::from_weights(w);
    let mut per = Vec::new();
    let mut checked = 0;
    for (ai, arr) in w.arrays().iter().enumerate() {
        let n = arr.data.len();
        let idx = sample(&mut rng, n, per_array.min(n)).into_vec();
        let mut worst: f64 = 0.0;
        for i in idx {
            let orig = probe.data[ai][i];
            let mut failure = None;
            let fd = central::<T>(arr.data[i], eps, |v| {
                probe.data[ai][i] = v;
                total_loss(&probe, &x, truth, lambdas.0, lambdas.1).unwrap_or_else(|e| {
                    failure = Some(e);
                    T::zero()
                })
            });
            probe.data[ai][i] = orig;
            if let Some(e) = failure {
                return Err(e);
            }
            worst = worst.max(relative_error(analytic.arrays()[ai].data[i], fd));
            checked += 1;
        }
        per.push((arr.name.clone(), worst));
    }
    let max_rel_error = per.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_array: per,
        checked,
    })
}

/// End-to-end check of every parameter array with `per_array` samples each.
pub fn grad_check(w: &WeightSet, input: &Tensor, truth: &GroundTruthFrame, eps: f64, per_array: usize, seed: u64) -> Result<GradCheckReport> {
    let lambdas = (0.7, 0.3);
    let analytic = analytic_gradient(w, input, truth, lambdas.0, lambdas.1)?;
    compare_with_fd(w, &analytic, input, truth, eps, lambdas, per_array, seed)
}

fn random_vec(rng: &mut ChaCha12Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_tensor(rng: &mut ChaCha12Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(c, h, w, random_vec(rng, c * h * w, 1.0))
}

fn wide(v: &[f64]) -> Vec<Wide> {
    v.iter().map(|&x| Wide::from_f64(x)).collect()
}

/// Max relative error of `grad` against central differences of `f` at `x`
/// on the coordinates `idx` (all when `None`).
fn fd_error_at(x: &[f64], grad: &[f64], idx: Option<&[usize]>, eps: f64, f: impl Fn(&[Wide]) -> Wide) -> f64 {
    let mut probe = wide(x);
    let all: Vec<usize>;
    let idx = match idx {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    for &i in idx {
        let fd = central::<Wide>(x[i], eps, |v| {
            probe[i] = v;
            f(&probe)
        });
        probe[i] = Wide::from_f64(x[i]);
        worst = worst.max(relative_error(grad[i], fd));
    }
    worst
}

fn fd_max_error(x: &[f64], grad: &[f64], f: impl Fn(&[Wide]) -> Wide, eps: f64) -> f64 {
    fd_error_at(x, grad, None, eps, f)
}

fn check_conv(rng: &mut ChaCha12Rng, s: ConvSpec, h: usize, w: usize, eps: f64) -> f64 {
    let x = random_tensor(rng, s.in_ch, h, w);
    let wt = random_vec(rng, s.weight_len(), 0.5);
    let b = random_vec(rng, s.out_ch, 0.5);
    let y = conv2d(&x, &wt, &b, s);
    let r = random_tensor(rng, y.c, y.h, y.w);
    let (dx, dw, db) = conv2d_backward(&x, &wt, s, &r);
    let (xw, ww, bw, rw) = (x.cast::<Wide>(), wide(&wt), wide(&b), r.cast::<Wide>());
    let ex = fd_max_error(&x.data, &dx.data, |v| conv2d(&Tensor::from_vec(x.c, h, w, v.to_vec()), &ww, &bw, s).dot(&rw), eps);
    let ew = fd_max_error(&wt, &dw, |v| conv2d(&xw, v, &bw, s).dot(&rw), eps);
    let eb = fd_max_error(&b, &db, |v| conv2d(&xw, &ww, v, s).dot(&rw), eps);
    ex.max(ew).max(eb)
}

/// Per-layer checks: each layer is wrapped in a random linear functional
/// `Σ r·f(x, θ)` and differentiated with respect to inputs and parameters.
/// Returns `(layer, max relative error)`.
pub fn layer_checks(seed: u64, eps: f64) -> Vec<(&'static str, f64)> {
    let mut rng = rng::stream(seed, 1, Purpose::GradCheck);
    let mut out = Vec::new();

    out.push(("conv3x3_stride2", check_conv(&mut rng, ConvSpec::new(3, 4, 3, 2, 1), 8, 8, eps)));
    out.push(("conv3x3_same", check_conv(&mut rng, ConvSpec::new(4, 5, 3, 1, 1), 6, 6, eps)));
    out.push(("conv1x1", check_conv(&mut rng, ConvSpec::pointwise(6, 3), 4, 4, eps)));

    {
        let x = random_tensor(&mut rng, 3, 5, 5);
        let (y, cache) = instance_norm(&x);
        let r = random_tensor(&mut rng, y.c, y.h, y.w);
        let dx = instance_norm_backward(&cache, &r);
        let rw = r.cast::<Wide>();
        let e = fd_max_error(&x.data, &dx.data, |v| instance_norm(&Tensor::from_vec(3, 5, 5, v.to_vec())).0.dot(&rw), eps);
        out.push(("instance_norm", e));
    }
    {
        let x = random_tensor(&mut rng, 6, 4, 4);
        let g = random_vec(&mut rng, 6, 1.5);
        let b = random_vec(&mut rng, 6, 0.5);
        let (y, cache) = layer_norm(&x, &g, &b);
        let r = random_tensor(&mut rng, y.c, y.h, y.w);
        let (dx, dg, db) = layer_norm_backward(&cache, &g, &r);
        let (xw, gw, bw, rw) = (x.cast::<Wide>(), wide(&g), wide(&b), r.cast::<Wide>());
        let ex = fd_max_error(&x.data, &dx.data, |v| layer_norm(&Tensor::from_vec(6, 4, 4, v.to_vec()), &gw, &bw).0.dot(&rw), eps);
        let eg = fd_max_error(&g, &dg, |v| layer_norm(&xw, v, &bw).0.dot(&rw), eps);
        let eb = fd_max_error(&b, &db, |v| layer_norm(&xw, &gw, v).0.dot(&rw), eps);
        out.push(("layer_norm", ex.max(eg).max(eb)));
    }
    {
        let x = Tensor::from_vec(2, 4, 4, random_vec(&mut rng, 32, 4.0));
        let r = random_tensor(&mut rng, 2, 4, 4);
        let dx = silu_backward(&x, &r);
        let rw = r.cast::<Wide>();
        let e = fd_max_error(&x.data, &dx.data, |v| silu_forward(&Tensor::from_vec(2, 4, 4, v.to_vec())).dot(&rw), eps);
        out.push(("silu", e));
    }
    {
        let x = random_tensor(&mut rng, 3, 8, 8);
        let (y, arg) = max_pool(&x, 5);
        let r = random_tensor(&mut rng, y.c, y.h, y.w);
        let dx = max_pool_backward(&arg, &r);
        let rw = r.cast::<Wide>();
        let e = fd_max_error(&x.data, &dx.data, |v| max_pool(&Tensor::from_vec(3, 8, 8, v.to_vec()), 5).0.dot(&rw), eps);
        out.push(("max_pool", e));
    }
    {
        let x = random_tensor(&mut rng, 2, 8, 8);
        let r = random_tensor(&mut rng, 2, 8, 8);
        let dx = roll(&r, 2, 2);
        let rw = r.cast::<Wide>();
        let e = fd_max_error(&x.data, &dx.data, |v| roll(&Tensor::from_vec(2, 8, 8, v.to_vec()), -2, -2).dot(&rw), eps);
        out.push(("cyclic_shift", e));
    }
    {
        let (c, h, w, heads, ws) = (8, 8, 8, 2, 4);
        let q = random_tensor(&mut rng, c, h, w);
        let k = random_tensor(&mut rng, c, h, w);
        let v = random_tensor(&mut rng, c, h, w);
        let (y, cache) = window_attention(&q, &k, &v, heads, ws);
        let r = random_tensor(&mut rng, y.c, y.h, y.w);
        let (dq, dk, dv) = window_attention_backward(&q, &k, &v, &cache, &r);
        let (qw, kw, vw, rw) = (q.cast::<Wide>(), k.cast::<Wide>(), v.cast::<Wide>(), r.cast::<Wide>());
        let wrap = |d: &[Wide]| Tensor::from_vec(c, h, w, d.to_vec());
        let eq = fd_max_error(&q.data, &dq.data, |d| window_attention(&wrap(d), &kw, &vw, heads, ws).0.dot(&rw), eps);
        let ek = fd_max_error(&k.data, &dk.data, |d| window_attention(&qw, &wrap(d), &vw, heads, ws).0.dot(&rw), eps);
        let ev = fd_max_error(&v.data, &dv.data, |d| window_attention(&qw, &kw, &wrap(d), heads, ws).0.dot(&rw), eps);
        out.push(("window_attention", eq.max(ek).max(ev)));
    }

    let weights = WeightSet::seeded(seed);
    let wide_weights = ParamSet::<Wide>::from_weights(&weights);
    {
        // Shifted block at full width on an 8×8 grid.
        let x = random_tensor(&mut rng, WIDTH, 8, 8);
        let shift = (WINDOW / 2) as isize;
        let (y, cache) = block_forward(&x, &weights, "block2", shift);
        let r = random_tensor(&mut rng, y.c, y.h, y.w);
        let mut g = WeightSet::zeros();
        let dx = block_backward(&r, &cache, &weights, "block2", shift, &mut g);
        let rw = r.cast::<Wide>();
        let f = |xx: &Tensor<Wide>, ww: &ParamSet<Wide>| block_forward(xx, ww, "block2", shift).0.dot(&rw);
        let idx = sample(&mut rng, x.data.len(), 40).into_vec();
        let mut worst = fd_error_at(&x.data, &dx.data, Some(&idx), eps, |v| {
            f(&Tensor::from_vec(x.c, x.h, x.w, v.to_vec()), &wide_weights)
        });
        let xw = x.cast::<Wide>();
        worst = worst.max(sampled_param_error(&weights, &g, "block2.", 10, eps, &mut rng, |ww| f(&xw, ww)));
        out.push(("attention_block", worst));
    }
    {
        let x = random_tensor(&mut rng, WIDTH, 8, 8);
        let (y, cache) = sppf_forward(&x, &weights);
        let r = random_tensor(&mut rng, y.c, y.h, y.w);
        let mut g = WeightSet::zeros();
        let dx = sppf_backward(&r, &cache, &weights, &mut g);
        let rw = r.cast::<Wide>();
        let f = |xx: &Tensor<Wide>, ww: &ParamSet<Wide>| sppf_forward(xx, ww).0.dot(&rw);
        let idx = sample(&mut rng, x.data.len(), 40).into_vec();
        let mut worst = fd_error_at(&x.data, &dx.data, Some(&idx), eps, |v| {
            f(&Tensor::from_vec(x.c, x.h, x.w, v.to_vec()), &wide_weights)
        });
        let xw = x.cast::<Wide>();
        worst = worst.max(sampled_param_error(&weights, &g, "sppf.", 20, eps, &mut rng, |ww| f(&xw, ww)));
        out.push(("sppf", worst));
    }
    {
        let z = Tensor::from_vec(3, 4, 4, random_vec(&mut rng, 48, 3.0));
        let truth = GroundTruthFrame {
            frame: 0,
            entries: vec![(3.3, 9.1), (20.5, 30.2)],
        };
        let l = loss(&DetectionMap { logits: z.clone() }, &truth, 0.7, 0.3).unwrap();
        let e = fd_max_error(
            &z.data,
            &l.grad.data,
            |v| {
                loss(&DetectionMap { logits: Tensor::from_vec(3, 4, 4, v.to_vec()) }, &truth, 0.7, 0.3)
                    .unwrap()
                    .total
            },
            eps,
        );
        out.push(("loss", e));
    }
    out
}

fn sampled_param_error(
    w: &WeightSet,
    g: &WeightSet,
    prefix: &str,
    per_array: usize,
    eps: f64,
    rng: &mut ChaCha12Rng,
    f: impl Fn(&ParamSet<Wide>) -> Wide,
) -> f64 {
    let mut probe = ParamSet::<Wide>::from_weights(w);
    let mut worst: f64 = 0.0;
    for (ai, arr) in w.arrays().iter().enumerate() {
        if !arr.name.starts_with(prefix) {
            continue;
        }
        let n = arr.data.len();
        for i in sample(rng, n, per_array.min(n)).into_vec() {
            let fd = central::<Wide>(arr.data[i], eps, |v| {
                probe.data[ai][i] = v;
                f(&probe)
            });
            probe.data[ai][i] = Wide::from_f64(arr.data[i]);
            worst = worst.max(relative_error(g.arrays()[ai].data[i], fd));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize) -> (WeightSet, Tensor, GroundTruthFrame) {
        let mut rng = rng::stream(11, 0, Purpose::GradCheck);
        let x = Tensor::from_vec(3, n, n, (0..3 * n * n).map(|_| rng.random_range(0.0..1.0)).collect());
        let truth = GroundTruthFrame {
            frame: 0,
            entries: vec![(5.3, 17.8), (20.1, 2.6)],
        };
        (WeightSet::seeded(7), x, truth)
    }

    #[test]
    fn every_layer_passes() {
        for (name, e) in layer_checks(3, 1e-5) {
            assert!(e < 1e-6, "{name}: {e:e}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (w, x, t) = setup(32);
        let mut analytic = analytic_gradient(&w, &x, &t, 0.7, 0.3).unwrap();
        analytic.get_mut("enc2.weight").iter_mut().for_each(|g| *g *= 1.1);
        let r = compare_with_fd(&w, &analytic, &x, &t, 1e-5, (0.7, 0.3), 1, 5).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst().unwrap().0, "enc2.weight");
    }

    #[test]
    fn no_positive_frame_gives_finite_errors() {
        let (w, x, _) = setup(32);
        let empty = GroundTruthFrame { frame: 0, entries: vec![] };
        let r = grad_check(&w, &x, &empty, 1e-5, 1, 2).unwrap();
        assert!(r.per_array.iter().all(|(_, e)| e.is_finite()));
        assert!(r.max_rel_error < 1e-6, "{:?}", r.worst());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((relative_error(1.0, 1.01) - 0.01 / 1.01).abs() < 1e-15);
    }
}
