use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use super::metrics::{cosine_score, DcfParams, ScoredTrial, Sweep};
use super::trials::TrialSet;
use crate::backbone::SpeakerModel;
use crate::data::FeatureSource;
use crate::error::{Error, Result};
use crate::frontend::{mean_normalize, truncate, Offset};

/// Test-utterance duration range `[min, max)` in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DurationBucket {
    pub min: f64,
    pub max: Option<f64>,
}

impl DurationBucket {
    pub fn contains(&self, seconds: f64) -> bool {
        seconds >= self.min && self.max.is_none_or(|m| seconds < m)
    }

    pub fn label(&self) -> String {
        match self.max {
            Some(m) => format!("{}-{}s", fmt_num(self.min), fmt_num(m)),
            None => format!(">{}s", fmt_num(self.min)),
        }
    }

    /// Comma-separated `lo-hi` or open-ended `lo-` ranges, e.g. `1-2,2-4,4-`.
    pub fn parse_list(s: &str) -> Result<Vec<DurationBucket>> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|part| {
                let bad = || Error::invalid(format!("bad duration bucket `{part}`, expected `lo-hi` or `lo-`"));
                let (lo, hi) = part.trim().split_once('-').ok_or_else(bad)?;
                let min: f64 = lo.parse().map_err(|_| bad())?;
                let max = if hi.is_empty() {
                    None
                } else {
                    Some(hi.parse::<f64>().map_err(|_| bad())?)
                };
                if min < 0.0 || max.is_some_and(|m| m <= min) {
                    return Err(bad());
                }
                Ok(DurationBucket { min, max })
            })
            .collect()
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

pub fn truncation_label(seconds: f64) -> String {
    format!("{}s", fmt_num(seconds))
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Test-side truncation lengths in seconds; each adds a row.
    pub truncations: Vec<f64>,
    pub buckets: Vec<DurationBucket>,
    pub offset: Offset,
    pub dcf: DcfParams,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            truncations: Vec::new(),
            buckets: Vec::new(),
            offset: Offset::Start,
            dcf: DcfParams::default(),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub label: String,
    pub trials: usize,
    /// `None` when the subset lacks one of the two classes.
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub min_dcf: Option<f64>,
}

impl MetricRow {
    fn new(label: String, scored: &[ScoredTrial], dcf: &DcfParams) -> Self {
        let sweep = Sweep::new(scored).ok();
        let eer = sweep.as_ref().map(Sweep::eer);
        MetricRow {
            label,
            trials: scored.len(),
            eer: eer.map(|e| e.0),
            eer_threshold: eer.map(|e| e.1),
            min_dcf: sweep.map(|s| s.min_dcf(dcf).0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Truncated rows first, then `regular`, then duration buckets.
    pub rows: Vec<MetricRow>,
    /// Full-length scores in trial order.
    pub scores: Vec<f64>,
}

fn opt(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.*}", digits, x * scale))
}

impl EvalReport {
    pub fn row(&self, label: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>8} {:>8} {:>8}\n", "set", "trials", "EER(%)", "minDCF");
        for r in &self.rows {
            writeln!(s, "{:<10} {:>8} {:>8} {:>8}", r.label, r.trials, opt(r.eer, 100.0, 2), opt(r.min_dcf, 1.0, 4)).unwrap();
        }
        s
    }

    /// `eer=` and `mindcf=` for the full-length row, `eer_<label>=` and
    /// `mindcf_<label>=` for the others; EER as a fraction.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let suffix = if r.label == "regular" { String::new() } else { format!("_{}", r.label) };
            writeln!(s, "trials{suffix}={}", r.trials).unwrap();
            writeln!(s, "eer{suffix}={}", opt(r.eer, 1.0, 6)).unwrap();
            writeln!(s, "mindcf{suffix}={}", opt(r.min_dcf, 1.0, 6)).unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        format!("{}\n{}", self.table(), self.key_values())
    }
}

struct UttEmbeddings {
    seconds: f64,
    full: Vec<f32>,
    truncated: Vec<Vec<f32>>,
}

fn id_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a so random offsets differ per utterance but stay reproducible
    id.bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// Embed every referenced utterance once, score all trials with cosine
/// similarity and summarize EER and minDCF overall, per truncation length and
/// per test-duration bucket. Truncation applies to the test side only.
/// Multi-utterance enrollments (`a+b`) use the mean embedding.
pub fn evaluate_trials(
    model: &SpeakerModel<f32>,
    trials: &TrialSet,
    source: &dyn FeatureSource,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::invalid("empty trial list"));
    }
    let ids = trials.utterance_ids();
    let missing: Vec<String> = ids.iter().filter(|id| !source.contains(id)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingUtterances(missing));
    }
    let tests: HashSet<&str> = trials.trials.iter().map(|t| t.test.as_str()).collect();
    let embed_one = |id: &String| -> Result<(String, UttEmbeddings)> {
        let raw = source.features(id)?;
        let full = model.embed(mean_normalize(&raw).tensor())?.into_data();
        let mut truncated = Vec::new();
        if tests.contains(id.as_str()) {
            let offset = match opts.offset {
                Offset::Start => Offset::Start,
                Offset::Random { seed } => Offset::Random { seed: id_seed(seed, id) },
            };
            for &s in &opts.truncations {
                let t = truncate(&raw, s, offset)?;
                truncated.push(model.embed(t.features.tensor())?.into_data());
            }
        }
        Ok((
            id.clone(),
            UttEmbeddings {
                seconds: raw.duration_seconds(),
                full,
                truncated,
            },
        ))
    };
    let cache: HashMap<String, UttEmbeddings> = build_pool(opts.workers)?
        .install(|| ids.par_iter().map(embed_one).collect::<Result<Vec<_>>>())?
        .into_iter()
        .collect();

    let mut enroll_cache: HashMap<&str, Vec<f32>> = HashMap::new();
    for t in &trials.trials {
        if enroll_cache.contains_key(t.enroll.as_str()) {
            continue;
        }
        let parts: Vec<&Vec<f32>> = t.enroll_ids().map(|id| &cache[id].full).collect();
        let mut mean = vec![0f32; parts[0].len()];
        for p in &parts {
            for (m, &v) in mean.iter_mut().zip(p.iter()) {
                *m += v / parts.len() as f32;
            }
        }
        enroll_cache.insert(&t.enroll, mean);
    }

    let score_with = |pick: &dyn Fn(&UttEmbeddings) -> &Vec<f32>| -> Result<Vec<ScoredTrial>> {
        trials
            .trials
            .iter()
            .map(|t| {
                Ok(ScoredTrial {
                    target: t.target,
                    score: cosine_score(&enroll_cache[t.enroll.as_str()], pick(&cache[&t.test]))?,
                })
            })
            .collect()
    };

    let mut rows = Vec::new();
    for (k, &s) in opts.truncations.iter().enumerate() {
        let scored = score_with(&|u| &u.truncated[k])?;
        rows.push(MetricRow::new(truncation_label(s), &scored, &opts.dcf));
    }
    let regular = score_with(&|u| &u.full)?;
    let overall = MetricRow::new("regular".into(), &regular, &opts.dcf);
    if overall.eer.is_none() {
        return Err(Error::invalid("trial list needs both target and nontarget trials"));
    }
    rows.push(overall);
    for b in &opts.buckets {
        let subset: Vec<ScoredTrial> = trials
            .trials
            .iter()
            .zip(&regular)
            .filter(|(t, _)| b.contains(cache[&t.test].seconds))
            .map(|(_, s)| *s)
            .collect();
        rows.push(MetricRow::new(b.label(), &subset, &opts.dcf));
    }
    Ok(EvalReport {
        rows,
        scores: regular.iter().map(|s| s.score).collect(),
    })
}
