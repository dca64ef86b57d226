//! Generator and discriminator objectives: least-squares adversarial terms,
//! a differentiable MS-SSIM and the reversed Huber (BerHu) penalty.

use snapfocus_imaging::metrics::{reference_range, MsssimConfig};
use snapfocus_imaging::Image;

use crate::error::{NetError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Threshold between the L1 and quadratic branches of BerHu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BerhuC {
    /// 10% of the standard deviation of the (normalized) targets in the batch.
    Auto,
    Fixed(f64),
}

impl BerhuC {
    pub fn resolve(&self, target: &Tensor) -> f64 {
        match *self {
            BerhuC::Fixed(c) => c,
            BerhuC::Auto => {
                let d = target.data();
                let n = d.len() as f64;
                let mean = d.iter().sum::<f64>() / n;
                let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (0.1 * var.sqrt()).max(1e-6)
            }
        }
    }
}

/// Scalar BerHu value of one residual.
pub fn berhu_value(d: f64, c: f64) -> f64 {
    if d.abs() <= c {
        d.abs()
    } else {
        (d * d + c * c) / (2.0 * c)
    }
}

/// BerHu penalty of `pred - target`, summed or averaged over every element.
pub fn berhu(g: &mut Graph, pred: Var, target: Var, c: f64, reduction: Reduction) -> Result<Var> {
    if !(c > 0.0) {
        return Err(NetError::Domain(format!("BerHu threshold {c} must be positive")));
    }
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(NetError::Shape(format!(
            "BerHu of {:?} against {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    let d = g.sub(pred, target)?;
    let mask: Vec<bool> = g.value(d).data().iter().map(|v| v.abs() <= c).collect();
    let l1 = g.abs(d)?;
    let sq = g.square(d)?;
    let quad = g.affine(sq, 0.5 / c, 0.5 * c)?;
    let per = g.select(mask, l1, quad)?;
    match reduction {
        Reduction::Sum => g.sum(per),
        Reduction::Mean => g.mean(per),
    }
}

const DIV_EPS: f64 = 1e-12;

/// Per-sample MS-SSIM of `image` against `reference`, shape `(n,1,1,1)`.
/// Mirrors `snapfocus_imaging::metrics::msssim` with the dynamic range taken
/// from each reference sample unless the config fixes it.
pub fn msssim(g: &mut Graph, image: Var, reference: Var, cfg: &MsssimConfig) -> Result<Var> {
    let shape = g.value(image).shape();
    if shape != g.value(reference).shape() || shape[1] != 1 {
        return Err(NetError::Shape(format!(
            "MS-SSIM of {shape:?} against {:?}",
            g.value(reference).shape()
        )));
    }
    let [n, _, h, w] = shape;
    let supported = snapfocus_imaging::metrics::max_scales(w, h, cfg.window);
    if cfg.scales == 0 || cfg.scales > supported || cfg.weights.len() != cfg.scales {
        return Err(NetError::Config(format!(
            "{} scales requested, {h}x{w} supports {supported}",
            cfg.scales
        )));
    }
    let per = h * w;
    let (mut c1s, mut c2s) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for s in 0..n {
        let slice = &g.value(reference).data()[s * per..(s + 1) * per];
        let range = cfg.dynamic_range.unwrap_or_else(|| {
            let img = Image::new(w, h, 1.0, slice.to_vec()).expect("sample shape");
            reference_range(&img)
        });
        let (c1, c2) = cfg.constants(range);
        c1s.push(c1);
        c2s.push(c2);
    }
    let c1 = g.constant(Tensor::new([n, 1, 1, 1], c1s)?);
    let c2 = g.constant(Tensor::new([n, 1, 1, 1], c2s)?);
    let taps = cfg.window_taps();
    let (mut a, mut b) = (image, reference);
    let mut value: Option<Var> = None;
    for j in 0..cfg.scales {
        let aa = g.square(a)?;
        let bb = g.square(b)?;
        let ab = g.mul(a, b)?;
        let mu_a = g.filter_valid(a, &taps)?;
        let mu_b = g.filter_valid(b, &taps)?;
        let e_aa = g.filter_valid(aa, &taps)?;
        let e_bb = g.filter_valid(bb, &taps)?;
        let e_ab = g.filter_valid(ab, &taps)?;
        let ma2 = g.square(mu_a)?;
        let mb2 = g.square(mu_b)?;
        let mab = g.mul(mu_a, mu_b)?;
        let var_a = g.sub(e_aa, ma2)?;
        let var_b = g.sub(e_bb, mb2)?;
        let cov = g.sub(e_ab, mab)?;
        let cs_num = g.affine(cov, 2.0, 0.0)?;
        let cs_num = g.add(cs_num, c2)?;
        let cs_den = g.add(var_a, var_b)?;
        let cs_den = g.add(cs_den, c2)?;
        let cs = g.div(cs_num, cs_den, DIV_EPS)?;
        let factor = if j + 1 == cfg.scales {
            let l_num = g.affine(mab, 2.0, 0.0)?;
            let l_num = g.add(l_num, c1)?;
            let l_den = g.add(ma2, mb2)?;
            let l_den = g.add(l_den, c1)?;
            let lum = g.div(l_num, l_den, DIV_EPS)?;
            let map = g.mul(lum, cs)?;
            g.mean_per_sample(map)?
        } else {
            let m = g.mean_per_sample(cs)?;
            a = g.avgpool2(a)?;
            b = g.avgpool2(b)?;
            m
        };
        let weighted = if cfg.weights[j] == 1.0 {
            factor
        } else {
            g.signed_pow(factor, cfg.weights[j])?
        };
        value = Some(match value {
            None => weighted,
            Some(v) => g.mul(v, weighted)?,
        });
    }
    Ok(value.expect("at least one scale"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Adversarial weight.
    pub lambda: f64,
    /// Structural (1 - MS-SSIM) weight.
    pub nu: f64,
    /// BerHu weight.
    pub xi: f64,
    pub berhu_c: BerhuC,
    pub berhu_reduction: Reduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            nu: 1.0,
            xi: 1.0,
            berhu_c: BerhuC::Auto,
            berhu_reduction: Reduction::Mean,
        }
    }
}

impl LossWeights {
    pub fn without_adversary() -> Self {
        Self {
            lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda) && ok(self.nu) && ok(self.xi)) {
            return Err(NetError::Config("loss weights must be finite and non-negative".into()));
        }
        if self.nu == 0.0 && self.xi == 0.0 {
            return Err(NetError::Config("at least one of nu and xi must be positive".into()));
        }
        if let BerhuC::Fixed(c) = self.berhu_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(NetError::Config(format!("BerHu threshold {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Rescales `lambda` and `nu` so each weighted term equals `xi·berhu`.
    /// A zero weight or zero term is left untouched.
    pub fn balanced(&self, terms: &LossTerms) -> Self {
        let mut out = *self;
        let anchor = if self.xi > 0.0 { self.xi * terms.berhu } else { self.nu * terms.structural };
        if anchor > 0.0 {
            if self.nu > 0.0 && terms.structural > 0.0 {
                out.nu = anchor / terms.structural;
            }
            if self.lambda > 0.0 && terms.adversarial > 0.0 {
                out.lambda = anchor / terms.adversarial;
            }
        }
        out
    }
}

/// Unweighted values of the three generator terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    /// `mean[(1 - D(G(x)))²]`
    pub adversarial: f64,
    /// `mean[1 - MS-SSIM(y, G(x))]`
    pub structural: f64,
    pub berhu: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.lambda * self.adversarial + w.nu * self.structural + w.xi * self.berhu
    }
}

pub struct GeneratorLoss {
    pub total: Var,
    pub terms: LossTerms,
}

/// `λ·mean[(1 - D(G(x)))²] + ν·mean[1 - MS-SSIM] + ξ·BerHu`. `d_fake` may
/// be omitted only when λ is zero; terms with zero weight are not built.
pub fn loss_generator(
    g: &mut Graph,
    pred: Var,
    target: Var,
    d_fake: Option<Var>,
    w: &LossWeights,
    ms_cfg: &MsssimConfig,
) -> Result<GeneratorLoss> {
    w.validate()?;
    let mut terms = LossTerms::default();
    let mut parts = Vec::new();
    if w.lambda > 0.0 {
        let d = d_fake.ok_or_else(|| NetError::Config("adversarial weight set without discriminator output".into()))?;
        let adv = {
            let one_minus = g.affine(d, -1.0, 1.0)?;
            let sq = g.square(one_minus)?;
            g.mean(sq)?
        };
        terms.adversarial = g.scalar(adv);
        parts.push(g.affine(adv, w.lambda, 0.0)?);
    }
    if w.nu > 0.0 {
        let ms = msssim(g, pred, target, ms_cfg)?;
        let m = g.mean(ms)?;
        let s = g.affine(m, -1.0, 1.0)?;
        terms.structural = g.scalar(s);
        parts.push(g.affine(s, w.nu, 0.0)?);
    }
    if w.xi > 0.0 {
        let c = w.berhu_c.resolve(g.value(target));
        let b = berhu(g, pred, target, c, w.berhu_reduction)?;
        terms.berhu = g.scalar(b);
        parts.push(g.affine(b, w.xi, 0.0)?);
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok(GeneratorLoss { total, terms })
}

/// `mean[D(G(x))²] + mean[(1 - D(y))²]`.
pub fn loss_discriminator(g: &mut Graph, d_fake: Var, d_real: Var) -> Result<Var> {
    let f2 = g.square(d_fake)?;
    let fake = g.mean(f2)?;
    let one_minus = g.affine(d_real, -1.0, 1.0)?;
    let r2 = g.square(one_minus)?;
    let real = g.mean(r2)?;
    g.add(fake, real)
}
