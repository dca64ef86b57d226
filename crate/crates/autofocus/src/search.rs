use std::time::Instant;

use crate::criteria::{focus_metric, prefer, FocusCriterion};
use crate::error::{AutofocusError, Result};
use crate::stage::VirtualStage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Half-width of the search interval around the starting position.
    pub search_range: f64,
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            search_range: 10.0,
            tolerance: 0.1,
            max_evaluations: 50,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.search_range > self.tolerance) {
            return Err(AutofocusError::InvalidConfig(format!(
                "need 0 < tolerance ({}) < search_range ({})",
                self.tolerance, self.search_range
            )));
        }
        if self.max_evaluations < 3 {
            return Err(AutofocusError::InvalidConfig("max_evaluations must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub z_star: f64,
    pub evaluations: usize,
    pub acquisitions: usize,
    /// Wall-clock compute plus simulated acquisition latency, in seconds.
    pub elapsed: f64,
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub z: f64,
    pub value: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Brent maximization of `f` on `[lo, hi]`, run as minimization of `-f`.
///
/// The bracket is seeded by evaluating `lo`, `start` and `hi`; the best of
/// the three becomes the incumbent. Iteration stops once every point of the
/// bracket is within `tolerance` of the incumbent (bracket width ≤
/// 2·tolerance in the worst case) or after `max_evaluations` calls. Returns
/// the best point seen, with ties going to the smaller |z|.
pub fn brent_maximize(
    mut f: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    start: f64,
    hi: f64,
    tolerance: f64,
    max_evaluations: usize,
) -> Result<Maximum> {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    if !(lo < hi && (lo..=hi).contains(&start) && tolerance > 0.0 && max_evaluations >= 3) {
        return Err(AutofocusError::InvalidConfig(format!(
            "bad bracket [{lo}, {hi}] start {start} tolerance {tolerance} budget {max_evaluations}"
        )));
    }
    let mut trace = Vec::new();
    let mut eval = |z: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(z)?;
        trace.push((z, v));
        if !v.is_finite() {
            return Err(AutofocusError::NonFinite { z, trace: trace.clone() });
        }
        Ok(-v)
    };

    let mut seeds = [lo, start, hi].map(|z| (z, 0.0));
    for s in seeds.iter_mut() {
        s.1 = eval(s.0, &mut trace)?;
    }
    // Best first, so x/w/v are the incumbent, runner-up and third.
    seeds.sort_by(|p, q| p.1.total_cmp(&q.1).then(p.0.abs().total_cmp(&q.0.abs())));
    let [(mut x, mut fx), (mut w, mut fw), (mut v, mut fv)] = seeds;
    let (mut a, mut b) = (lo, hi);
    // Previous-previous step; starting it at the full width lets the very
    // first move be parabolic.
    let mut e = b - a;
    let mut d = 0.0;

    while trace.len() < max_evaluations {
        let m = 0.5 * (a + b);
        let tol1 = 0.5 * tolerance;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if q > 0.0 && p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let step = if d.abs() >= tol1 { d } else { tol1.copysign(d) };
        let u = (x + step).clamp(a, b);
        let fu = eval(u, &mut trace)?;

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }

    let (z, value) = trace
        .iter()
        .copied()
        .reduce(|best, cur| if prefer(cur.1, cur.0, best.1, best.0) { cur } else { best })
        .expect("at least three evaluations");
    Ok(Maximum { z, value, trace })
}

/// Focus search over `[z0 - range, z0 + range]` from the stage's current
/// position z0. Every evaluation is one acquisition; the final capture at
/// `z_star` is not taken.
pub fn brent_search(stage: &mut VirtualStage, criterion: FocusCriterion, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let z0 = stage.z_position();
    let (lo, hi) = (z0 - cfg.search_range, z0 + cfg.search_range);
    stage.check_range(lo)?;
    stage.check_range(hi)?;
    let count0 = stage.acquisition_count();
    let sim0 = stage.simulated_time();
    let started = Instant::now();
    let best = brent_maximize(
        |z| {
            let frame = stage.acquire_at(z)?;
            focus_metric(&frame, criterion)
        },
        lo,
        z0,
        hi,
        cfg.tolerance,
        cfg.max_evaluations,
    )?;
    let compute = started.elapsed().as_secs_f64();
    let acquisitions = stage.acquisition_count() - count0;
    debug_assert_eq!(acquisitions, best.trace.len());
    Ok(SearchResult {
        z_star: best.z,
        evaluations: best.trace.len(),
        acquisitions,
        elapsed: compute + (stage.simulated_time() - sim0),
        trace: best.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges_fast() {
        let r = brent_maximize(|z| Ok(-(z - 1.3f64).powi(2)), -10.0, 0.0, 10.0, 0.1, 100).unwrap();
        assert!((r.z - 1.3).abs() <= 0.1, "{}", r.z);
        assert!(r.trace.len() <= 12, "{} evaluations", r.trace.len());
    }

    #[test]
    fn budget_is_respected() {
        let r = brent_maximize(|z| Ok((3.0 * z).sin() - 0.1 * z * z), -5.0, 0.3, 5.0, 1e-6, 7).unwrap();
        assert_eq!(r.trace.len(), 7);
        assert!(r.trace.iter().all(|&(z, _)| (-5.0..=5.0).contains(&z)));
    }

    #[test]
    fn optimum_at_the_edge() {
        let r = brent_maximize(|z| Ok(z), -2.0, 0.0, 2.0, 0.05, 100).unwrap();
        assert_eq!(r.z, 2.0);
    }

    #[test]
    fn non_finite_carries_trace() {
        let err = brent_maximize(|z| Ok(if z > 0.5 { f64::NAN } else { -z * z }), -1.0, 0.0, 1.0, 0.01, 50)
            .unwrap_err();
        match err {
            AutofocusError::NonFinite { z, trace } => {
                assert_eq!(z, 1.0);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let bad = SearchConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SearchConfig {
            search_range: 0.05,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
