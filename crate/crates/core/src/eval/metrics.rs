use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Cosine similarity computed in f64.
pub fn cosine_score<F: Scalar>(a: &[F], b: &[F]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_score",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine score of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredTrial {
    pub target: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) || !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(Error::invalid(format!("invalid detection cost parameters {self:?}")));
        }
        Ok(())
    }

    fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        let norm = (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target));
        (self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa) / norm
    }
}

/// Error rates at every candidate threshold. A trial is accepted when its
/// score is strictly above the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    /// `-inf`, midpoints between consecutive distinct scores, `+inf`.
    pub thresholds: Vec<f64>,
    pub false_accept: Vec<f64>,
    pub false_reject: Vec<f64>,
}

impl Sweep {
    pub fn new(trials: &[ScoredTrial]) -> Result<Self> {
        let n_tar = trials.iter().filter(|t| t.target).count();
        let n_non = trials.len() - n_tar;
        if n_tar == 0 || n_non == 0 {
            return Err(Error::invalid(format!(
                "error rates need both classes, got {n_tar} target and {n_non} nontarget trials"
            )));
        }
        if let Some(t) = trials.iter().find(|t| !t.score.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score {}", t.score)));
        }
        let mut sorted: Vec<ScoredTrial> = trials.to_vec();
        sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

        let mut thresholds = vec![f64::NEG_INFINITY];
        let mut false_accept = vec![1.0];
        let mut false_reject = vec![0.0];
        let (mut tar_below, mut non_below) = (0usize, 0usize);
        let mut i = 0;
        while i < sorted.len() {
            let v = sorted[i].score;
            while i < sorted.len() && sorted[i].score == v {
                if sorted[i].target {
                    tar_below += 1;
                } else {
                    non_below += 1;
                }
                i += 1;
            }
            thresholds.push(if i < sorted.len() {
                v + (sorted[i].score - v) / 2.0
            } else {
                f64::INFINITY
            });
            false_accept.push((n_non - non_below) as f64 / n_non as f64);
            false_reject.push(tar_below as f64 / n_tar as f64);
        }
        Ok(Sweep {
            thresholds,
            false_accept,
            false_reject,
        })
    }

    /// Raw `(false accept, false reject)` operating points.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.false_accept.iter().copied().zip(self.false_reject.iter().copied())
    }

    pub fn eer(&self) -> (f64, f64) {
        let (fa, fr, th) = (&self.false_accept, &self.false_reject, &self.thresholds);
        // fr - fa rises from -1 at -inf to +1 at +inf
        let j = (0..th.len()).find(|&j| fr[j] >= fa[j]).expect("crossing exists");
        let d1 = fr[j] - fa[j];
        if d1 == 0.0 || j == 0 {
            return (fa[j], th[j]);
        }
        let d0 = fr[j - 1] - fa[j - 1];
        let t = -d0 / (d1 - d0);
        let eer = fa[j - 1] + t * (fa[j] - fa[j - 1]);
        let (lo, hi) = (th[j - 1], th[j]);
        let threshold = if lo.is_finite() && hi.is_finite() {
            lo + t * (hi - lo)
        } else if lo.is_finite() {
            lo
        } else {
            hi
        };
        (eer, threshold)
    }

    pub fn min_dcf(&self, params: &DcfParams) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for (j, (fa, fr)) in self.points().enumerate() {
            let c = params.cost(fr, fa);
            if c < best.0 {
                best = (c, self.thresholds[j]);
            }
        }
        best
    }
}

/// Equal error rate and the threshold at the interpolated crossing.
pub fn compute_eer(trials: &[ScoredTrial]) -> Result<(f64, f64)> {
    Ok(Sweep::new(trials)?.eer())
}

/// Minimum normalized detection cost and the threshold achieving it.
pub fn compute_min_dcf(trials: &[ScoredTrial], params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok(Sweep::new(trials)?.min_dcf(params))
}
