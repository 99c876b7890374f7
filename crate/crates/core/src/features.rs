//! `(θ, z)` landmark probability maps.
//!
//! Two detectors share the [`FeatureMap`] output: an oracle that softens
//! ground-truth labels, and a heuristic that reads radial intensity profiles
//! with smooth reductions so the map is differentiable in the image
//! intensities ([`heuristic_backward`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PolarImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureClass {
    #[serde(rename = "G")]
    Guidewire,
    #[serde(rename = "B")]
    Bifurcation,
    #[serde(rename = "C")]
    Calcification,
}

impl FeatureClass {
    pub fn symbol(&self) -> &'static str {
        match self {
            FeatureClass::Guidewire => "G",
            FeatureClass::Bifurcation => "B",
            FeatureClass::Calcification => "C",
        }
    }
}

/// Landmark classes compared between modalities.
pub const LANDMARKS: [FeatureClass; 2] = [FeatureClass::Bifurcation, FeatureClass::Calcification];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Mpr,
    Ivus,
}

impl Modality {
    pub fn classes(&self) -> Vec<FeatureClass> {
        match self {
            Modality::Mpr => LANDMARKS.to_vec(),
            Modality::Ivus => vec![FeatureClass::Guidewire, FeatureClass::Bifurcation, FeatureClass::Calcification],
        }
    }
}

/// Per-class `(θ, z)` probabilities. Entry `(class c, θ bin t, slice p)` is
/// stored at `t + n_theta·(p + n_z·c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub classes: Vec<FeatureClass>,
    pub n_theta: usize,
    pub n_z: usize,
    pub probs: Vec<f64>,
}

impl FeatureMap {
    pub fn new(classes: Vec<FeatureClass>, n_theta: usize, n_z: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != classes.len() * n_theta * n_z {
            return Err(Error::Shape(format!(
                "feature map has {} values for {} classes x {n_theta} x {n_z}",
                probs.len(),
                classes.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("feature probabilities must lie in [0, 1]"));
        }
        Ok(Self { classes, n_theta, n_z, probs })
    }

    pub fn zeros(classes: Vec<FeatureClass>, n_theta: usize, n_z: usize) -> Self {
        let n = classes.len() * n_theta * n_z;
        Self { classes, n_theta, n_z, probs: vec![0.0; n] }
    }

    pub fn channel_len(&self) -> usize {
        self.n_theta * self.n_z
    }

    pub fn class_index(&self, class: FeatureClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn channel(&self, class: FeatureClass) -> Option<&[f64]> {
        let c = self.class_index(class)?;
        let n = self.channel_len();
        Some(&self.probs[c * n..(c + 1) * n])
    }

    pub fn get(&self, class: FeatureClass, i_theta: usize, p: usize) -> f64 {
        self.channel(class).expect("class present")[i_theta + self.n_theta * p]
    }

    /// Map restricted to `classes`, in that order.
    pub fn select(&self, classes: &[FeatureClass]) -> Result<FeatureMap> {
        let mut probs = Vec::with_capacity(classes.len() * self.channel_len());
        for &c in classes {
            let ch =
                self.channel(c).ok_or_else(|| Error::invalid(format!("feature map has no class {}", c.symbol())))?;
            probs.extend_from_slice(ch);
        }
        Ok(FeatureMap { classes: classes.to_vec(), n_theta: self.n_theta, n_z: self.n_z, probs })
    }

    /// Map whose θ bin `t` holds this map's bin `source(t)`.
    pub fn remap_theta(&self, source: impl Fn(usize) -> usize) -> FeatureMap {
        let mut out = self.clone();
        let (nt, nz) = (self.n_theta, self.n_z);
        for c in 0..self.classes.len() {
            for p in 0..nz {
                for t in 0..nt {
                    out.probs[t + nt * (p + nz * c)] = self.probs[source(t) + nt * (p + nz * c)];
                }
            }
        }
        out
    }
}

/// Binary `(θ, z)` labels per class, same layout as [`FeatureMap`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub classes: Vec<FeatureClass>,
    pub n_theta: usize,
    pub n_z: usize,
    pub labels: Vec<bool>,
}

impl LabelMap {
    pub fn empty(classes: Vec<FeatureClass>, n_theta: usize, n_z: usize) -> Self {
        let n = classes.len() * n_theta * n_z;
        Self { classes, n_theta, n_z, labels: vec![false; n] }
    }

    pub fn class_index(&self, class: FeatureClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn channel(&self, class: FeatureClass) -> Option<&[bool]> {
        let c = self.class_index(class)?;
        let n = self.n_theta * self.n_z;
        Some(&self.labels[c * n..(c + 1) * n])
    }

    pub fn get(&self, class: FeatureClass, i_theta: usize, p: usize) -> bool {
        self.channel(class).map(|ch| ch[i_theta + self.n_theta * p]).unwrap_or(false)
    }

    pub fn set(&mut self, class: FeatureClass, i_theta: usize, p: usize, value: bool) {
        let c = self.class_index(class).expect("class present");
        let idx = i_theta + self.n_theta * (p + self.n_z * c);
        self.labels[idx] = value;
    }

    pub fn count(&self, class: FeatureClass) -> usize {
        self.channel(class).map(|ch| ch.iter().filter(|&&b| b).count()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Oracle,
    Heuristic,
}

/// Intensity thresholds of the heuristic detector for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Level separating lumen from wall in the smoothed profile.
    pub lumen: f64,
    /// Calcification: soft maximum of the profile above this level.
    pub calcification: f64,
    /// Bifurcation: soft lumen run length (mm) beyond this extent.
    pub bifurcation_mm: f64,
    /// Guidewire shadow: distal mean intensity below this level.
    pub shadow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sharpness {
    pub guidewire: f64,
    pub bifurcation: f64,
    pub calcification: f64,
    pub lumen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub mpr: Thresholds,
    pub ivus: Thresholds,
    pub sharpness: Sharpness,
    /// Temperature of the smooth maximum over r (intensity units).
    pub temperature: f64,
    /// Half-width (bins) of the radial box filter applied before reductions.
    pub smoothing_half_width: usize,
    /// Radius (mm) from which the distal shadow mean is taken.
    pub shadow_start_mm: f64,
    /// Oracle mode: i.i.d. label flip probability.
    pub label_noise: f64,
    /// Oracle mode: soften labels with the fixed 3×3 kernel.
    pub oracle_blur: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Heuristic,
            mpr: Thresholds { lumen: 0.65, calcification: 1.5, bifurcation_mm: 2.5, shadow: 0.05 },
            ivus: Thresholds { lumen: 0.72, calcification: 1.3, bifurcation_mm: 2.5, shadow: 0.1 },
            sharpness: Sharpness { guidewire: 60.0, bifurcation: 6.0, calcification: 25.0, lumen: 30.0 },
            temperature: 0.05,
            smoothing_half_width: 2,
            shadow_start_mm: 2.8,
            label_noise: 0.0,
            oracle_blur: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sharpness;
        let ks = [s.guidewire, s.bifurcation, s.calcification, s.lumen];
        if ks.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(Error::invalid("detector sharpness must be positive"));
        }
        for t in [&self.mpr, &self.ivus] {
            if ![t.lumen, t.calcification, t.bifurcation_mm, t.shadow].iter().all(|x| x.is_finite()) {
                return Err(Error::invalid("detector thresholds must be finite"));
            }
        }
        if !(self.temperature > 0.0) || !(self.shadow_start_mm >= 0.0) {
            return Err(Error::invalid("temperature must be positive and shadow start non-negative"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::invalid("label flip probability must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn thresholds(&self, modality: Modality) -> &Thresholds {
        match modality {
            Modality::Mpr => &self.mpr,
            Modality::Ivus => &self.ivus,
        }
    }
}

/// Oracle detector: labels cast to {0, 1}, flipped i.i.d. with
/// `cfg.label_noise`, then optionally blurred with `[0.1, 0.8, 0.1]` along θ
/// (circular) and z (edge-replicated). Any true bin stays above 0.5 and any
/// false bin below it after the blur.
pub fn detect_oracle(labels: &LabelMap, cfg: &DetectorConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let n = labels.n_theta * labels.n_z;
    if labels.labels.len() != n * labels.classes.len() {
        return Err(Error::Shape("label map length does not match its dimensions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probs: Vec<f64> = labels
        .labels
        .iter()
        .map(|&b| {
            let flip = cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise;
            if b ^ flip {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    if cfg.oracle_blur {
        for c in 0..labels.classes.len() {
            blur_channel(&mut probs[c * n..(c + 1) * n], labels.n_theta, labels.n_z);
        }
    }
    FeatureMap::new(labels.classes.clone(), labels.n_theta, labels.n_z, probs)
}

fn blur_channel(ch: &mut [f64], nt: usize, nz: usize) {
    const K: [f64; 3] = [0.1, 0.8, 0.1];
    let src = ch.to_vec();
    let mut tmp = vec![0.0; src.len()];
    for p in 0..nz {
        for t in 0..nt {
            let l = (t + nt - 1) % nt;
            let r = (t + 1) % nt;
            tmp[t + nt * p] = K[0] * src[l + nt * p] + K[1] * src[t + nt * p] + K[2] * src[r + nt * p];
        }
    }
    for p in 0..nz {
        let lo = p.saturating_sub(1);
        let hi = (p + 1).min(nz - 1);
        for t in 0..nt {
            ch[t + nt * p] =
                (K[0] * tmp[t + nt * lo] + K[1] * tmp[t + nt * p] + K[2] * tmp[t + nt * hi]).clamp(0.0, 1.0);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-profile intermediate values of the heuristic detector.
struct ProfileEval {
    softmax_w: Vec<f64>,
    soft_max: f64,
    lumen: Vec<f64>,
    run_mm: f64,
    distal_mean: f64,
    g: f64,
    b: f64,
    c: f64,
}

struct Heuristic<'a> {
    cfg: &'a DetectorConfig,
    th: &'a Thresholds,
    n_r: usize,
    dr: f64,
    distal_start: usize,
    ivus: bool,
}

impl<'a> Heuristic<'a> {
    fn new(cfg: &'a DetectorConfig, modality: Modality, n_r: usize, dr: f64) -> Self {
        let distal_start = ((cfg.shadow_start_mm / dr - 0.5).ceil().max(0.0) as usize).min(n_r - 1);
        Self { cfg, th: cfg.thresholds(modality), n_r, dr, distal_start, ivus: modality == Modality::Ivus }
    }

    fn window(&self, r: usize) -> (usize, usize) {
        let h = self.cfg.smoothing_half_width;
        (r.saturating_sub(h), (r + h).min(self.n_r - 1))
    }

    fn forward(&self, x: &[f64]) -> ProfileEval {
        let n = self.n_r;
        let smoothed: Vec<f64> = (0..n)
            .map(|r| {
                let (lo, hi) = self.window(r);
                x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();

        // T·log(mean exp(y/T)): increasing in every y_r, within T·ln(n) of max.
        let temp = self.cfg.temperature;
        let top = smoothed.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = smoothed.iter().map(|&y| ((y - top) / temp).exp()).collect();
        let z: f64 = e.iter().sum();
        let softmax_w: Vec<f64> = e.iter().map(|w| w / z).collect();
        let soft_max = top + temp * (z / n as f64).ln();

        let k = &self.cfg.sharpness;
        let lumen: Vec<f64> = smoothed.iter().map(|&y| sigmoid(k.lumen * (y - self.th.lumen))).collect();
        let mut prod = 1.0;
        let mut run = 0.0;
        for &l in &lumen {
            prod *= l;
            run += prod;
        }
        let run_mm = run * self.dr;

        let distal = &smoothed[self.distal_start..];
        let distal_mean = distal.iter().sum::<f64>() / distal.len() as f64;

        let c = sigmoid(k.calcification * (soft_max - self.th.calcification));
        let b = sigmoid(k.bifurcation * (run_mm - self.th.bifurcation_mm));
        let g = if self.ivus { sigmoid(k.guidewire * (self.th.shadow - distal_mean)) } else { 0.0 };
        ProfileEval { softmax_w, soft_max, lumen, run_mm, distal_mean, g, b, c }
    }

    /// Accumulates `∂L/∂x` for one profile into `out`.
    fn backward(&self, ev: &ProfileEval, dg: f64, db: f64, dc: f64, out: &mut [f64]) {
        let n = self.n_r;
        let k = &self.cfg.sharpness;
        let mut dy = vec![0.0; n];

        // Calcification through the soft maximum.
        let dm = dc * k.calcification * ev.c * (1.0 - ev.c);
        if dm != 0.0 {
            for j in 0..n {
                dy[j] += dm * ev.softmax_w[j];
            }
        }

        // Bifurcation through the cumulative product of lumen indicators:
        // ∂R/∂ℓ_j = P_{j-1} · (1 + ℓ_{j+1} + ℓ_{j+1}ℓ_{j+2} + …).
        let drun = db * k.bifurcation * ev.b * (1.0 - ev.b) * self.dr;
        if drun != 0.0 {
            let mut suffix = vec![1.0; n];
            for j in (0..n - 1).rev() {
                suffix[j] = 1.0 + ev.lumen[j + 1] * suffix[j + 1];
            }
            let mut prefix = 1.0;
            for j in 0..n {
                let l = ev.lumen[j];
                let dl = drun * prefix * suffix[j];
                dy[j] += dl * k.lumen * l * (1.0 - l);
                prefix *= l;
            }
        }

        if self.ivus {
            let dd = -dg * k.guidewire * ev.g * (1.0 - ev.g);
            if dd != 0.0 {
                let cnt = (n - self.distal_start) as f64;
                for v in dy[self.distal_start..].iter_mut() {
                    *v += dd / cnt;
                }
            }
        }

        // Transpose of the box filter.
        for r in 0..n {
            if dy[r] == 0.0 {
                continue;
            }
            let (lo, hi) = self.window(r);
            let share = dy[r] / (hi - lo + 1) as f64;
            for o in out[lo..=hi].iter_mut() {
                *o += share;
            }
        }
    }
}

/// Heuristic detector over radial profiles.
///
/// Per `(θ, z)`, with `y` the radially box-filtered profile:
/// - C = σ(k_c · (T·ln(mean_r exp(y_r/T)) − τ_c)), a smooth maximum;
/// - B = σ(k_b · (run − τ_b)), where `run` is the soft length (mm) of the
///   leading lumen segment, `dr · Σ_r Π_{j≤r} σ(k_l (y_j − τ_l))`;
/// - G (IVUS only) = σ(k_g · (τ_g − mean of y beyond the shadow radius)).
pub fn detect_heuristic(img: &PolarImage, modality: Modality, cfg: &DetectorConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let (nt, nz) = (img.config.n_theta, img.n_z);
    let classes = modality.classes();
    let n = nt * nz;
    let mut probs = vec![0.0; classes.len() * n];
    let h = Heuristic::new(cfg, modality, img.config.n_r, img.config.dr);
    let off = if modality == Modality::Ivus { 1 } else { 0 };
    for p in 0..nz {
        for t in 0..nt {
            let ev = h.forward(img.profile(t, p));
            let i = t + nt * p;
            if off == 1 {
                probs[i] = ev.g;
            }
            probs[off * n + i] = ev.b;
            probs[(off + 1) * n + i] = ev.c;
        }
    }
    FeatureMap::new(classes, nt, nz, probs)
}

/// Vector-Jacobian product of [`detect_heuristic`]: given `∂L/∂probs` in the
/// feature-map layout of `modality`, returns `∂L/∂img.data`.
pub fn heuristic_backward(
    img: &PolarImage,
    modality: Modality,
    cfg: &DetectorConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let (nt, nz, nr) = (img.config.n_theta, img.n_z, img.config.n_r);
    let n = nt * nz;
    let off = if modality == Modality::Ivus { 1 } else { 0 };
    if upstream.len() != (off + 2) * n {
        return Err(Error::Shape(format!(
            "upstream gradient has {} entries, expected {}",
            upstream.len(),
            (off + 2) * n
        )));
    }
    let h = Heuristic::new(cfg, modality, nr, img.config.dr);
    let mut out = vec![0.0; img.data.len()];
    for p in 0..nz {
        for t in 0..nt {
            let i = t + nt * p;
            let dg = if off == 1 { upstream[i] } else { 0.0 };
            let db = upstream[off * n + i];
            let dc = upstream[(off + 1) * n + i];
            if dg == 0.0 && db == 0.0 && dc == 0.0 {
                continue;
            }
            let ev = h.forward(img.profile(t, p));
            let start = img.index(0, t, p);
            h.backward(&ev, dg, db, dc, &mut out[start..start + nr]);
        }
    }
    Ok(out)
}

/// Diagnostic statistics of the heuristic detector for one profile:
/// `(soft max, lumen run mm, distal mean)`.
pub fn profile_statistics(profile: &[f64], dr: f64, modality: Modality, cfg: &DetectorConfig) -> (f64, f64, f64) {
    let h = Heuristic::new(cfg, modality, profile.len(), dr);
    let ev = h.forward(profile);
    (ev.soft_max, ev.run_mm, ev.distal_mean)
}

/// Binary `(θ, z)` guidewire mask, index `θ + n_theta·z`; `true` bins are
/// excluded from the intensity similarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidewireMask {
    pub n_theta: usize,
    pub n_z: usize,
    pub masked: Vec<bool>,
}

impl GuidewireMask {
    pub fn none(n_theta: usize, n_z: usize) -> Self {
        Self { n_theta, n_z, masked: vec![false; n_theta * n_z] }
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_masked(&self, i_theta: usize, p: usize) -> bool {
        self.masked[i_theta + self.n_theta * p]
    }
}

/// `mask = P(G) > threshold`.
pub fn binarize_guidewire(fm: &FeatureMap, threshold: f64) -> Result<GuidewireMask> {
    let ch = fm.channel(FeatureClass::Guidewire).ok_or_else(|| Error::invalid("feature map has no guidewire class"))?;
    Ok(GuidewireMask { n_theta: fm.n_theta, n_z: fm.n_z, masked: ch.iter().map(|&p| p > threshold).collect() })
}

/// Detection scores of one class against reference labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    /// F1 over frames, a frame being positive when any θ bin is.
    pub frame_f1: f64,
    /// F1 over individual `(θ, z)` bins.
    pub bin_f1: f64,
}

/// Scores `fm` (thresholded at 0.5) against `labels` for `class`.
pub fn detection_score(fm: &FeatureMap, labels: &LabelMap, class: FeatureClass) -> Result<DetectionScore> {
    let pred = fm.channel(class).ok_or_else(|| Error::invalid("class missing from feature map"))?;
    let truth = labels.channel(class).ok_or_else(|| Error::invalid("class missing from labels"))?;
    if fm.n_theta != labels.n_theta || fm.n_z != labels.n_z {
        return Err(Error::Shape("feature map and labels differ in shape".into()));
    }
    let nt = fm.n_theta;
    let mut bins = [0usize; 3];
    let mut frames = [0usize; 3];
    for p in 0..fm.n_z {
        let mut fp_any = false;
        let mut ft_any = false;
        for t in 0..nt {
            let a = pred[t + nt * p] > 0.5;
            let b = truth[t + nt * p];
            tally(&mut bins, a, b);
            fp_any |= a;
            ft_any |= b;
        }
        tally(&mut frames, fp_any, ft_any);
    }
    Ok(DetectionScore { frame_f1: f1_from(frames), bin_f1: f1_from(bins) })
}

fn tally(c: &mut [usize; 3], pred: bool, truth: bool) {
    match (pred, truth) {
        (true, true) => c[0] += 1,
        (true, false) => c[1] += 1,
        (false, true) => c[2] += 1,
        _ => {}
    }
}

/// F1 from `[tp, fp, fn]`; a class absent from both prediction and truth
/// scores 1.
fn f1_from(c: [usize; 3]) -> f64 {
    let [tp, fp, fneg] = c;
    if tp + fp + fneg == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PolarConfig;

    fn image_from(cfg: PolarConfig, n_z: usize, f: impl Fn(usize, usize, usize) -> f64) -> PolarImage {
        let mut data = vec![0.0; cfg.n_r * cfg.n_theta * n_z];
        for p in 0..n_z {
            for t in 0..cfg.n_theta {
                for r in 0..cfg.n_r {
                    data[r + cfg.n_r * (t + cfg.n_theta * p)] = f(r, t, p);
                }
            }
        }
        PolarImage::new(cfg, (0..n_z).map(|p| p as f64 * cfg.dz).collect(), data).unwrap()
    }

    /// Vessel-like profile: lumen to 1.5 mm, wall to 2.2 mm, background.
    fn vessel(r: usize) -> f64 {
        let rad = (r as f64 + 0.5) * 0.07;
        if rad < 1.5 {
            1.0
        } else if rad < 2.2 {
            0.35
        } else {
            0.1
        }
    }

    #[test]
    fn oracle_without_noise_preserves_labels() {
        let mut labels = LabelMap::empty(LANDMARKS.to_vec(), 48, 20);
        labels.set(FeatureClass::Calcification, 5, 7, true);
        for t in 10..14 {
            labels.set(FeatureClass::Bifurcation, t, 3, true);
            labels.set(FeatureClass::Bifurcation, t, 4, true);
        }
        let fm = detect_oracle(&labels, &DetectorConfig::default()).unwrap();
        for (p, l) in fm.probs.iter().zip(&labels.labels) {
            assert_eq!(*p > 0.5, *l);
        }
        assert!((fm.get(FeatureClass::Calcification, 5, 7) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn oracle_of_empty_labels_is_low() {
        let labels = LabelMap::empty(Modality::Ivus.classes(), 48, 30);
        let fm = detect_oracle(&labels, &DetectorConfig::default()).unwrap();
        assert!(fm.probs.iter().all(|&p| p < 0.5));
    }

    #[test]
    fn oracle_flip_rate_is_binomial() {
        // 2 classes × 48 × 128 = 12288 bins; σ of the rate ≈ 0.0027, so the
        // ±0.02 window is over 7σ wide.
        let labels = LabelMap::empty(LANDMARKS.to_vec(), 48, 128);
        let cfg = DetectorConfig { label_noise: 0.1, oracle_blur: false, seed: 42, ..Default::default() };
        let fm = detect_oracle(&labels, &cfg).unwrap();
        let rate = fm.probs.iter().filter(|&&p| p > 0.5).count() as f64 / fm.probs.len() as f64;
        assert!((rate - 0.1).abs() < 0.02, "rate {rate}");
        let again = detect_oracle(&labels, &cfg).unwrap();
        assert_eq!(fm, again);
    }

    #[test]
    fn constant_image_is_below_threshold() {
        let img = image_from(PolarConfig::default(), 6, |_, _, _| 0.5);
        for modality in [Modality::Mpr, Modality::Ivus] {
            let fm = detect_heuristic(&img, modality, &DetectorConfig::default()).unwrap();
            assert!(fm.probs.iter().all(|&p| p < 0.5), "{modality:?}");
        }
    }

    #[test]
    fn vessel_profiles_classify() {
        let cfg = DetectorConfig::default();
        let plain = image_from(PolarConfig::default(), 1, |r, _, _| vessel(r));
        let fm = detect_heuristic(&plain, Modality::Mpr, &cfg).unwrap();
        assert!(fm.probs.iter().all(|&p| p < 0.05));

        // Calcified wall at θ bin 12.
        let calc = image_from(PolarConfig::default(), 1, |r, t, _| {
            let rad = (r as f64 + 0.5) * 0.07;
            if t == 12 && (1.5..2.0).contains(&rad) {
                2.0
            } else {
                vessel(r)
            }
        });
        let fm = detect_heuristic(&calc, Modality::Mpr, &cfg).unwrap();
        let c = fm.channel(FeatureClass::Calcification).unwrap();
        let best = (0..48).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(best, 12);
        assert!(c[12] > 0.9);

        // Branch lumen continuing past the wall at θ bins 30..34.
        let branch =
            image_from(PolarConfig::default(), 1, |r, t, _| if (30..34).contains(&t) { 1.0 } else { vessel(r) });
        let fm = detect_heuristic(&branch, Modality::Mpr, &cfg).unwrap();
        let b = fm.channel(FeatureClass::Bifurcation).unwrap();
        for t in 0..48 {
            assert_eq!(b[t] > 0.5, (30..34).contains(&t), "bin {t}: {}", b[t]);
        }
    }

    #[test]
    fn boosting_a_profile_raises_calcification_monotonically() {
        let cfg = DetectorConfig::default();
        let mut last = 0.0;
        for boost in [0.0, 0.4, 0.8, 1.2, 1.6, 2.0] {
            let img = image_from(PolarConfig::default(), 1, |r, t, _| {
                let rad = (r as f64 + 0.5) * 0.07;
                vessel(r) + if t == 3 && (1.5..2.0).contains(&rad) { boost } else { 0.0 }
            });
            let c = detect_heuristic(&img, Modality::Mpr, &cfg).unwrap().get(FeatureClass::Calcification, 3, 0);
            assert!(c >= last);
            last = c;
        }
        assert!(last > 0.5);
    }

    #[test]
    fn heuristic_backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let cfg = DetectorConfig::default();
        let pc = PolarConfig { n_theta: 8, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..pc.n_r * 8 * 3).map(|_| rng.random_range(-0.15..0.15)).collect();
        // Profiles near the decision thresholds so every class has a
        // non-vanishing derivative.
        let img = image_from(pc, 3, |r, t, p| {
            let rad = (r as f64 + 0.5) * 0.07;
            let base = if rad < 1.5 + 0.2 * t as f64 {
                0.9
            } else if rad < 2.6 {
                0.4
            } else {
                0.12 * p as f64
            };
            base + if t == 2 && (1.5..1.9).contains(&rad) { 0.6 } else { 0.0 } + noise[r + pc.n_r * (t + 8 * p)]
        });
        let modality = Modality::Ivus;
        let fm = detect_heuristic(&img, modality, &cfg).unwrap();
        let weights: Vec<f64> = (0..fm.probs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = heuristic_backward(&img, modality, &cfg, &weights).unwrap();
        let loss = |im: &PolarImage| -> f64 {
            let f = detect_heuristic(im, modality, &cfg).unwrap();
            f.probs.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let mut checked = 0;
        for _ in 0..50 {
            let i = rng.random_range(0..img.data.len());
            let mut plus = img.clone();
            plus.data[i] += h;
            let mut minus = img.clone();
            minus.data[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let tol = 1e-3 * fd.abs() + 1e-7;
            assert!((grad[i] - fd).abs() <= tol, "index {i}: {} vs {fd}", grad[i]);
            if fd.abs() > 1e-6 {
                checked += 1;
            }
        }
        assert!(checked > 10, "too few informative samples ({checked})");
    }

    #[test]
    fn guidewire_mask_thresholds() {
        let classes = Modality::Ivus.classes();
        let zero = FeatureMap::zeros(classes.clone(), 48, 4);
        assert_eq!(binarize_guidewire(&zero, 0.5).unwrap().masked_count(), 0);
        let mut one = zero.clone();
        one.probs[..48 * 4].iter_mut().for_each(|p| *p = 1.0);
        assert_eq!(binarize_guidewire(&one, 0.5).unwrap().masked_count(), 48 * 4);
        let mpr = FeatureMap::zeros(LANDMARKS.to_vec(), 48, 4);
        assert!(binarize_guidewire(&mpr, 0.5).is_err());
    }
}
