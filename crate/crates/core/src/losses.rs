//! Similarity and smoothness terms of the registration objective.
//!
//! Each term returns a [`LossValue`] whose gradient is taken with respect to
//! the term's own differentiable input: the predicted probabilities for
//! [`dice_ce`], the second image's intensities for [`masked_nmi`], and the
//! transform parameters for [`reg_loss`]. The composition into a gradient
//! over the transform parameters lives in
//! [`crate::registration::total_loss`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, GuidewireMask};
use crate::geometry::PolarImage;
use crate::registration::TransformParams;

/// Soft-Dice smoothing constant.
pub const DICE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Mean over classes of `(1 − softDice) + BCE`, with `pred` the moving-side
/// map and `target` the fixed-side map used as soft labels. Both maps must
/// hold the same classes in the same order.
///
/// softDice = (2Σpt + ε) / (Σp + Σt + ε); BCE is the mean over bins of
/// `−t ln p − (1−t) ln(1−p)` with `0·ln 0 = 0`.
pub fn dice_ce(pred: &FeatureMap, target: &FeatureMap, want_grad: bool) -> Result<LossValue> {
    if pred.classes != target.classes || pred.n_theta != target.n_theta || pred.n_z != target.n_z {
        return Err(Error::Shape(format!(
            "dice/ce inputs differ: {:?} {}x{} vs {:?} {}x{}",
            pred.classes, pred.n_theta, pred.n_z, target.classes, target.n_theta, target.n_z
        )));
    }
    let n = pred.channel_len();
    let n_cls = pred.classes.len();
    if n_cls == 0 || n == 0 {
        return Err(Error::Shape("dice/ce needs at least one class and one bin".into()));
    }
    let mut total = 0.0;
    let mut grad = if want_grad { Some(vec![0.0; pred.probs.len()]) } else { None };
    for c in 0..n_cls {
        let p = &pred.probs[c * n..(c + 1) * n];
        let t = &target.probs[c * n..(c + 1) * n];
        let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
        let sp: f64 = p.iter().sum();
        let st: f64 = t.iter().sum();
        let num = 2.0 * inter + DICE_EPS;
        let den = sp + st + DICE_EPS;
        let dice_term = 1.0 - num / den;

        let mut bce = 0.0;
        for (&pi, &ti) in p.iter().zip(t) {
            bce -= xlogy(ti, pi) + xlogy(1.0 - ti, 1.0 - pi);
        }
        bce /= n as f64;
        total += dice_term + bce;

        if let Some(g) = grad.as_mut() {
            let gc = &mut g[c * n..(c + 1) * n];
            for i in 0..n {
                let (pi, ti) = (p[i], t[i]);
                let d_dice = -(2.0 * ti * den - num) / (den * den);
                let mut d_bce = 0.0;
                if ti != 0.0 {
                    d_bce -= ti / pi.max(LOG_FLOOR);
                }
                if ti != 1.0 {
                    d_bce += (1.0 - ti) / (1.0 - pi).max(LOG_FLOOR);
                }
                gc[i] = (d_dice + d_bce / n as f64) / n_cls as f64;
            }
        }
    }
    Ok(LossValue { value: total / n_cls as f64, gradient: grad })
}

const LOG_FLOOR: f64 = 1e-12;

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.max(LOG_FLOOR).ln()
    }
}

/// Histogram settings of [`masked_nmi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmiConfig {
    pub bins: usize,
    /// Parzen window width in bin units.
    pub sigma: f64,
}

impl Default for NmiConfig {
    fn default() -> Self {
        Self { bins: 32, sigma: 0.5 }
    }
}

/// Minimum unmasked fraction of `(θ, z)` bins.
pub const MIN_UNMASKED_FRACTION: f64 = 0.1;

/// Parzen window: a Gaussian of width σ (bins) minus the polynomial
/// `a + b·d² + c·d⁴` that makes it vanish at distance 1 together with its
/// first two derivatives. Each sample therefore touches only its two
/// neighbouring bin centers, the weights are C² in the intensity, and a
/// sample lying on a center falls in that bin alone.
#[derive(Debug, Clone, Copy)]
struct Parzen {
    lambda: f64,
    a: f64,
    b: f64,
    c: f64,
    scale: f64,
}

impl Parzen {
    fn new(sigma: f64) -> Self {
        let lambda = 1.0 / (2.0 * sigma * sigma);
        let g1 = (-lambda).exp();
        let c = 0.5 * lambda * lambda * g1;
        let b = -lambda * (1.0 + lambda) * g1;
        let a = g1 * (1.0 + lambda + 0.5 * lambda * lambda);
        Self { lambda, a, b, c, scale: 1.0 / (1.0 - a) }
    }

    /// Kernel value at distance `d ∈ [0, 1]` and its derivative in `d`.
    #[inline]
    fn eval(&self, d: f64) -> (f64, f64) {
        let d2 = d * d;
        let e = (-self.lambda * d2).exp();
        (
            (e - self.a - self.b * d2 - self.c * d2 * d2) * self.scale,
            (-2.0 * self.lambda * d * e - 2.0 * self.b * d - 4.0 * self.c * d2 * d) * self.scale,
        )
    }

    /// Lower bin, weight of the lower bin, and d(weight)/d(position).
    #[inline]
    fn weights(&self, x: f64, bins: usize) -> (usize, f64, f64) {
        let j = (x.floor().max(0.0) as usize).min(bins - 2);
        let f = x - j as f64;
        let (k0, dk0) = self.eval(f);
        let (k1, dk1) = self.eval(1.0 - f);
        let s = k0 + k1;
        let w0 = k0 / s;
        // d/df of k0/(k0+k1) with dk1/df = -dk1(1-f).
        let dw0 = (dk0 * s - k0 * (dk0 - dk1)) / (s * s);
        (j, w0, dw0)
    }
}

/// Normalized samples of one image over the unmasked set.
struct Normalized {
    pos: Vec<f64>,
    min_idx: usize,
    max_idx: usize,
    range: f64,
}

fn normalize(values: &[f64], bins: usize, name: &'static str) -> Result<Normalized> {
    let (mut min_idx, mut max_idx) = (0, 0);
    for (i, &v) in values.iter().enumerate() {
        if v < values[min_idx] {
            min_idx = i;
        }
        if v > values[max_idx] {
            max_idx = i;
        }
    }
    let lo = values[min_idx];
    let range = values[max_idx] - lo;
    if !(range > 0.0) {
        return Err(Error::DegenerateHistogram(name));
    }
    let scale = (bins - 1) as f64 / range;
    let pos = values.iter().map(|&v| (v - lo) * scale).collect();
    Ok(Normalized { pos, min_idx, max_idx, range })
}

fn unmasked_samples(img: &PolarImage, mask: &GuidewireMask) -> Vec<f64> {
    let nr = img.config.n_r;
    let mut out = Vec::with_capacity(img.data.len());
    for p in 0..img.n_z {
        for t in 0..img.config.n_theta {
            if !mask.is_masked(t, p) {
                out.extend_from_slice(img.profile(t, p));
            }
        }
    }
    debug_assert_eq!(out.len() % nr, 0);
    out
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Normalized mutual information `(H(a) + H(b)) / H(a, b)` over all radial
/// samples at unmasked `(θ, z)` bins; the returned value is `−NMI`.
///
/// Intensities are min-max normalized per image to `[0, bins − 1]` and
/// binned with the truncated Parzen window. The gradient, when requested,
/// is with respect to `b.data` (zero at masked bins) and includes the
/// dependence of the normalization on b's extreme samples.
pub fn masked_nmi(
    a: &PolarImage,
    b: &PolarImage,
    mask: &GuidewireMask,
    cfg: &NmiConfig,
    want_grad: bool,
) -> Result<LossValue> {
    if a.config != b.config || a.n_z != b.n_z {
        return Err(Error::Shape("NMI images differ in shape".into()));
    }
    if mask.n_theta != a.config.n_theta || mask.n_z != a.n_z {
        return Err(Error::Shape("guidewire mask does not match the image (θ, z) grid".into()));
    }
    if cfg.bins < 2 || !(cfg.sigma > 0.0) {
        return Err(Error::invalid("NMI needs at least 2 bins and a positive window width"));
    }
    let total = mask.masked.len();
    let unmasked = total - mask.masked_count();
    if (unmasked as f64) < MIN_UNMASKED_FRACTION * total as f64 || unmasked == 0 {
        return Err(Error::DegenerateMask { unmasked, total });
    }

    let bins = cfg.bins;
    let kernel = Parzen::new(cfg.sigma);
    let va = unmasked_samples(a, mask);
    let vb = unmasked_samples(b, mask);
    let na = normalize(&va, bins, "a")?;
    let nb = normalize(&vb, bins, "b")?;
    let n = va.len();
    let inv_n = 1.0 / n as f64;

    let wa: Vec<(usize, f64, f64)> = na.pos.iter().map(|&x| kernel.weights(x, bins)).collect();
    let wb: Vec<(usize, f64, f64)> = nb.pos.iter().map(|&x| kernel.weights(x, bins)).collect();

    let mut joint = vec![0.0; bins * bins];
    for (&(ja, a0, _), &(jb, b0, _)) in wa.iter().zip(&wb) {
        let (a1, b1) = (1.0 - a0, 1.0 - b0);
        joint[ja * bins + jb] += a0 * b0;
        joint[ja * bins + jb + 1] += a0 * b1;
        joint[(ja + 1) * bins + jb] += a1 * b0;
        joint[(ja + 1) * bins + jb + 1] += a1 * b1;
    }
    joint.iter_mut().for_each(|x| *x *= inv_n);
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for j in 0..bins {
        for k in 0..bins {
            pa[j] += joint[j * bins + k];
            pb[k] += joint[j * bins + k];
        }
    }
    let (ha, hb, hab) = (entropy(&pa), entropy(&pb), entropy(&joint));
    if !(hab > 0.0) {
        return Err(Error::DegenerateHistogram("joint"));
    }
    let nmi = (ha + hb) / hab;

    let gradient = if want_grad {
        // ∂NMI/∂p_b(k) and ∂NMI/∂p_ab(j,k); empty cells contribute nothing.
        let dlog = |p: f64| if p > 0.0 { -(p.ln() + 1.0) } else { 0.0 };
        let d_pb: Vec<f64> = pb.iter().map(|&p| dlog(p) / hab).collect();
        let scale_joint = -(ha + hb) / (hab * hab);
        let d_joint: Vec<f64> = joint.iter().map(|&p| dlog(p) * scale_joint).collect();

        let mut d_pos = vec![0.0; n];
        for i in 0..n {
            let (ja, a0, _) = wa[i];
            let (jb, _, db0) = wb[i];
            let a1 = 1.0 - a0;
            // ∂NMI/∂w_b(k) for the two touched bins k = jb, jb+1.
            let g0 = d_pb[jb] + a0 * d_joint[ja * bins + jb] + a1 * d_joint[(ja + 1) * bins + jb];
            let g1 = d_pb[jb + 1] + a0 * d_joint[ja * bins + jb + 1] + a1 * d_joint[(ja + 1) * bins + jb + 1];
            d_pos[i] = inv_n * (g0 - g1) * db0;
        }

        // Chain through normalization x̂ = (b − min)·(bins−1)/range.
        let s = (bins - 1) as f64 / nb.range;
        let mut d_vals: Vec<f64> = d_pos.iter().map(|d| d * s).collect();
        let sum_dpos_pos: f64 = d_pos.iter().zip(&nb.pos).map(|(d, x)| d * x).sum();
        let sum_dpos: f64 = d_pos.iter().sum();
        // ∂x̂_i/∂max = −x̂_i/range, ∂x̂_i/∂min = (x̂_i − (bins−1))/range.
        d_vals[nb.max_idx] -= sum_dpos_pos / nb.range;
        d_vals[nb.min_idx] += (sum_dpos_pos - (bins - 1) as f64 * sum_dpos) / nb.range;

        let mut full = vec![0.0; b.data.len()];
        let nr = b.config.n_r;
        let mut cursor = 0;
        for p in 0..b.n_z {
            for t in 0..b.config.n_theta {
                if mask.is_masked(t, p) {
                    continue;
                }
                let start = b.index(0, t, p);
                for r in 0..nr {
                    full[start + r] = -d_vals[cursor + r];
                }
                cursor += nr;
            }
        }
        Some(full)
    } else {
        None
    };
    Ok(LossValue { value: -nmi, gradient })
}

/// Smoothness penalty `Σ_p (Δθ_p)² + (Δt_u,p)² + (Δt_v,p)²` over first
/// differences between adjacent frames. Gradient in the parameter layout of
/// [`TransformParams::to_vec`].
pub fn reg_loss(params: &TransformParams) -> LossValue {
    let n = params.n_frames();
    let mut grad = vec![0.0; params.len()];
    let mut value = 0.0;
    for (series, offset) in [
        (&params.theta, TransformParams::THETA_OFFSET),
        (&params.t_u, TransformParams::THETA_OFFSET + n),
        (&params.t_v, TransformParams::THETA_OFFSET + 2 * n),
    ] {
        for p in 1..n {
            let d = series[p] - series[p - 1];
            value += d * d;
            grad[offset + p] += 2.0 * d;
            grad[offset + p - 1] -= 2.0 * d;
        }
    }
    LossValue { value, gradient: Some(grad) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureClass, LANDMARKS};
    use crate::geometry::PolarConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(n_theta: usize, n_z: usize, probs: Vec<f64>) -> FeatureMap {
        FeatureMap::new(LANDMARKS.to_vec(), n_theta, n_z, probs).unwrap()
    }

    fn small_cfg() -> PolarConfig {
        PolarConfig { n_r: 6, dr: 0.2, n_theta: 8, dz: 0.3 }
    }

    fn random_image(cfg: PolarConfig, n_z: usize, rng: &mut ChaCha8Rng) -> PolarImage {
        let data = (0..cfg.n_r * cfg.n_theta * n_z).map(|_| rng.random_range(0.0..1.0)).collect();
        PolarImage::new(cfg, (0..n_z).map(|p| p as f64 * cfg.dz).collect(), data).unwrap()
    }

    #[test]
    fn dice_ce_of_empty_maps_is_zero() {
        let z = fm(8, 8, vec![0.0; 128]);
        assert_eq!(dice_ce(&z, &z, false).unwrap().value, 0.0);
    }

    #[test]
    fn dice_ce_of_identical_binary_maps_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = fm(8, 8, (0..128).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect());
        assert!(dice_ce(&x, &x, false).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn dice_ce_uniform_against_single_bin_matches_formula() {
        // Both classes: pred ≡ 0.5 on 8×8, target one-hot at a single bin.
        let mut target = vec![0.0; 128];
        target[19] = 1.0;
        target[64 + 40] = 1.0;
        let pred = vec![0.5; 128];
        let got = dice_ce(&fm(8, 8, pred), &fm(8, 8, target), false).unwrap().value;
        let eps = 1e-5;
        let dice = (2.0 * 0.5 + eps) / (32.0 + 1.0 + eps);
        let bce = std::f64::consts::LN_2; // every bin contributes −ln 0.5
        let expected = 1.0 - dice + bce;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn dice_ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let pred: Vec<f64> = (0..128).map(|_| rng.random_range(0.05..0.95)).collect();
            let target: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..1.0)).collect();
            let t = fm(8, 8, target);
            let g = dice_ce(&fm(8, 8, pred.clone()), &t, true).unwrap().gradient.unwrap();
            let h = 1e-4;
            for i in 0..128 {
                let mut p = pred.clone();
                p[i] += h;
                let up = dice_ce(&fm(8, 8, p.clone()), &t, false).unwrap().value;
                p[i] -= 2.0 * h;
                let dn = dice_ce(&fm(8, 8, p), &t, false).unwrap().value;
                let fd = (up - dn) / (2.0 * h);
                assert!((g[i] - fd).abs() <= 1e-3 * fd.abs() + 1e-9, "bin {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn dice_ce_rejects_mismatch() {
        let a = fm(8, 8, vec![0.0; 128]);
        let b = FeatureMap::zeros(vec![FeatureClass::Bifurcation], 8, 8);
        assert!(dice_ce(&a, &b, false).is_err());
    }

    /// Image whose normalized intensities sit on bin centers.
    fn quantized(cfg: PolarConfig, n_z: usize, levels: usize, rng: &mut ChaCha8Rng) -> PolarImage {
        let mut img = random_image(cfg, n_z, rng);
        for x in img.data.iter_mut() {
            *x = (*x * levels as f64).floor().min(levels as f64 - 1.0);
        }
        img.data[0] = 0.0;
        img.data[1] = levels as f64 - 1.0;
        img
    }

    #[test]
    fn parzen_window_is_positive_and_vanishes_smoothly() {
        let k = Parzen::new(0.5);
        for i in 0..100 {
            assert!(k.eval(i as f64 / 100.0).0 > 0.0);
        }
        let (v, d) = k.eval(1.0);
        assert!(v.abs() < 1e-15 && d.abs() < 1e-15);
        let h = 1e-6;
        let second = (k.eval(1.0).1 - k.eval(1.0 - h).1) / h;
        assert!(second.abs() < 1e-4, "{second}");
        assert!((k.eval(0.0).0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nmi_of_identical_binned_images_is_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small_cfg();
        let a = quantized(cfg, 10, 32, &mut rng);
        let mask = GuidewireMask::none(cfg.n_theta, 10);
        let v = masked_nmi(&a, &a, &mask, &NmiConfig::default(), false).unwrap().value;
        assert!((v + 2.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn nmi_is_invariant_to_bin_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = small_cfg();
        let a = quantized(cfg, 10, 32, &mut rng);
        let mut perm: Vec<usize> = (0..32).collect();
        for i in (1..32).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut b = a.clone();
        b.data.iter_mut().for_each(|x| *x = perm[*x as usize] as f64);
        let mask = GuidewireMask::none(cfg.n_theta, 10);
        let nc = NmiConfig::default();
        let v_aa = masked_nmi(&a, &a, &mask, &nc, false).unwrap().value;
        let v_ab = masked_nmi(&a, &b, &mask, &nc, false).unwrap().value;
        assert!((v_aa - v_ab).abs() < 1e-6);
    }

    #[test]
    fn nmi_ignores_masked_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_cfg();
        let a = random_image(cfg, 10, &mut rng);
        let b = random_image(cfg, 10, &mut rng);
        let mut mask = GuidewireMask::none(cfg.n_theta, 10);
        for p in 0..10 {
            mask.masked[(p % 8) + 8 * p] = true;
        }
        let nc = NmiConfig::default();
        let base = masked_nmi(&a, &b, &mask, &nc, false).unwrap().value;
        let mut b2 = b.clone();
        for p in 0..10 {
            let t = p % 8;
            for r in 0..cfg.n_r {
                let i = b2.index(r, t, p);
                b2.data[i] = rng.random_range(-10.0..10.0);
            }
        }
        let v = masked_nmi(&a, &b2, &mask, &nc, false).unwrap().value;
        assert!((v - base).abs() < 1e-9);
    }

    /// Dense oracle: explicit weight matrices, explicit entropies.
    fn nmi_oracle(a: &[f64], b: &[f64], bins: usize, sigma: f64) -> f64 {
        // Gaussian minus a + b·d² + c·d⁴ with k, k', k'' zero at d = 1,
        // solved here from the three linear conditions.
        let kern = |d: f64| {
            let l = 1.0 / (2.0 * sigma * sigma);
            let g1 = (-l).exp();
            // [1 1 1; 0 2 4; 0 2 12]·(a, b, c) = (g1, −2l·g1, (4l² − 2l)·g1)
            let c = ((4.0 * l * l - 2.0 * l) * g1 + 2.0 * l * g1) / 8.0;
            let b = (-2.0 * l * g1 - 4.0 * c) / 2.0;
            let a = g1 - b - c;
            ((-d * d * l).exp() - a - b * d * d - c * d.powi(4)).max(0.0)
        };
        let weights = |v: &[f64]| -> Vec<Vec<f64>> {
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            v.iter()
                .map(|&x| {
                    let pos = (x - lo) / (hi - lo) * (bins - 1) as f64;
                    let w: Vec<f64> = (0..bins).map(|k| kern((pos - k as f64).abs().min(1.0))).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                })
                .collect()
        };
        let (wa, wb) = (weights(a), weights(b));
        let n = a.len() as f64;
        let mut joint = vec![vec![0.0; bins]; bins];
        for i in 0..a.len() {
            for j in 0..bins {
                for k in 0..bins {
                    joint[j][k] += wa[i][j] * wb[i][k] / n;
                }
            }
        }
        let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
        let ha: f64 = (0..bins).map(|j| h(joint[j].iter().sum())).sum();
        let hb: f64 = (0..bins).map(|k| h((0..bins).map(|j| joint[j][k]).sum())).sum();
        let hab: f64 = joint.iter().flatten().map(|&p| h(p)).sum();
        (ha + hb) / hab
    }

    #[test]
    fn nmi_matches_dense_oracle_on_toy_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = PolarConfig { n_r: 4, dr: 0.1, n_theta: 4, dz: 0.3 };
        let a = random_image(cfg, 4, &mut rng);
        let b = random_image(cfg, 4, &mut rng);
        let mask = GuidewireMask::none(4, 4);
        for bins in [4, 8, 32] {
            let nc = NmiConfig { bins, sigma: 0.5 };
            let got = -masked_nmi(&a, &b, &mask, &nc, false).unwrap().value;
            let want = nmi_oracle(&a.data, &b.data, bins, 0.5);
            assert!((got - want).abs() < 1e-8, "bins {bins}: {got} vs {want}");
        }
    }

    #[test]
    fn nmi_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_cfg();
        for _ in 0..5 {
            let a = random_image(cfg, 6, &mut rng);
            let b = random_image(cfg, 6, &mut rng);
            let mut mask = GuidewireMask::none(cfg.n_theta, 6);
            mask.masked[3] = true;
            let nc = NmiConfig::default();
            let g = masked_nmi(&a, &b, &mask, &nc, true).unwrap().gradient.unwrap();
            // The kernel is steep near its edge, so a wider step is truncation-bound.
            let h = 1e-6;
            for i in 0..b.data.len() {
                let mut bp = b.clone();
                bp.data[i] += h;
                let up = masked_nmi(&a, &bp, &mask, &nc, false).unwrap().value;
                bp.data[i] -= 2.0 * h;
                let dn = masked_nmi(&a, &bp, &mask, &nc, false).unwrap().value;
                let fd = (up - dn) / (2.0 * h);
                assert!((g[i] - fd).abs() <= 1e-3 * fd.abs() + 1e-7, "sample {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn nmi_errors_on_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = small_cfg();
        let a = random_image(cfg, 5, &mut rng);
        let full = GuidewireMask { n_theta: 8, n_z: 5, masked: vec![true; 40] };
        assert!(matches!(masked_nmi(&a, &a, &full, &NmiConfig::default(), false), Err(Error::DegenerateMask { .. })));
        let mut constant = a.clone();
        constant.data.iter_mut().for_each(|x| *x = 0.3);
        let none = GuidewireMask::none(8, 5);
        assert!(matches!(
            masked_nmi(&a, &constant, &none, &NmiConfig::default(), false),
            Err(Error::DegenerateHistogram(_))
        ));
    }

    #[test]
    fn reg_loss_examples() {
        let mut p = TransformParams::identity(5);
        assert_eq!(reg_loss(&p).value, 0.0);
        p.theta = (0..5).map(|i| i as f64 * 0.1).collect();
        assert!((reg_loss(&p).value - 0.04).abs() < 1e-12);
    }

    #[test]
    fn reg_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = TransformParams::identity(7);
        let mut x = p.to_vec();
        x.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        x[0] = 1.0;
        p.set_from_slice(&x).unwrap();
        let g = reg_loss(&p).gradient.unwrap();
        let h = 1e-4;
        for i in 0..x.len() {
            let mut q = x.clone();
            q[i] += h;
            p.set_from_slice(&q).unwrap();
            let up = reg_loss(&p).value;
            q[i] -= 2.0 * h;
            p.set_from_slice(&q).unwrap();
            let dn = reg_loss(&p).value;
            let fd = (up - dn) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs() + 1e-9, "param {i}");
        }
    }

    proptest! {
        #[test]
        fn dice_ce_is_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = fm(4, 4, (0..32).map(|_| rng.random_range(0.0..=1.0)).collect());
            let t = fm(4, 4, (0..32).map(|_| rng.random_range(0.0..=1.0)).collect());
            prop_assert!(dice_ce(&p, &t, false).unwrap().value >= 0.0);
        }

        #[test]
        fn nmi_is_symmetric(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = small_cfg();
            let a = random_image(cfg, 4, &mut rng);
            let b = random_image(cfg, 4, &mut rng);
            let mask = GuidewireMask::none(8, 4);
            let nc = NmiConfig::default();
            let ab = masked_nmi(&a, &b, &mask, &nc, false).unwrap().value;
            let ba = masked_nmi(&b, &a, &mask, &nc, false).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-9);
        }

        #[test]
        fn reg_loss_ignores_constant_rotation(seed in 0u64..500, shift in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = TransformParams::identity(6);
            p.theta = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.t_u = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let base = reg_loss(&p).value;
            p.theta.iter_mut().for_each(|t| *t += shift);
            prop_assert!((reg_loss(&p).value - base).abs() < 1e-9);
        }
    }
}
