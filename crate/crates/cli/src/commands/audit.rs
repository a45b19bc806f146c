use spkr_core::variant::PAPER_NUM_CLASSES;
use spkr_core::{ModelVariant, SpeakerModel};

use crate::error::CliError;
use crate::settings::Settings;

pub const REFERENCE_VARIANTS: [&str; 10] = [
    "resnet",
    "resnext-40w4c",
    "resnext-26w8c",
    "resnext-12w32c",
    "res2net-48w2s",
    "res2net-26w4s",
    "res2net-14w8s",
    "resnext-20w32c",
    "res2net-26w6s",
    "res2net-26w8s",
];

/// `(ours - expected) / expected` as a signed percentage with one decimal.
pub fn deviation(ours: usize, expected_millions: f64) -> String {
    let expected = expected_millions * 1e6;
    format!("{:+.1}%", (ours as f64 - expected) / expected * 100.0)
}

pub fn audit(s: &Settings) -> Result<(), CliError> {
    let mut names: Vec<String> = s.list("names")?;
    names.extend(s.list::<String>("variant")?);
    if names.is_empty() {
        names = REFERENCE_VARIANTS.iter().map(|n| n.to_string()).collect();
    }
    let expected: Vec<f64> = s.list("expected-params")?;
    if !expected.is_empty() && expected.len() != names.len() {
        return Err(CliError::Usage(format!(
            "{} expected totals for {} variants",
            expected.len(),
            names.len()
        )));
    }
    let classes: usize = s.or("classes", PAPER_NUM_CLASSES)?;
    let breakdown = s.flag("breakdown")?;
    let channels: Vec<usize> = s.list("stage-channels")?;
    let depths: Vec<usize> = s.list("blocks-per-stage")?;
    let layout = |mut v: ModelVariant| {
        if !channels.is_empty() {
            v.stage_channels = channels.clone();
        }
        if !depths.is_empty() {
            v.blocks_per_stage = depths.clone();
        }
        v.validate().map(|_| v)
    };

    let mut failures = Vec::new();
    let mut table = format!("{:<16} {:>12} {:>9}", "variant", "params", "millions");
    if !expected.is_empty() {
        table.push_str(&format!(" {:>9} {:>10}", "expected", "deviation"));
    }
    table.push('\n');
    let mut kv = String::new();
    let mut details = String::new();
    for (i, name) in names.iter().enumerate() {
        let model = match ModelVariant::parse(name, classes)
            .and_then(layout)
            .and_then(|v| SpeakerModel::<f32>::build(&v, 0)) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                failures.push(name.clone());
                continue;
            }
        };
        let count = model.count_parameters();
        table.push_str(&format!(
            "{:<16} {:>12} {:>9.3}",
            name,
            count.total,
            count.total as f64 / 1e6
        ));
        kv.push_str(&format!("params_{name}={}\n", count.total));
        if let Some(&e) = expected.get(i) {
            let d = deviation(count.total, e);
            table.push_str(&format!(" {:>9} {:>10}", format!("{e}M"), d));
            kv.push_str(&format!("deviation_{name}={d}\n"));
        }
        table.push('\n');
        if breakdown {
            details.push_str(&format!("\n{name}\n"));
            for (layer, n) in &count.layers {
                details.push_str(&format!("  {layer:<12} {n:>10}\n"));
            }
        }
    }
    print!("{table}{details}\n{kv}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("could not audit: {}", failures.join(", "))))
    }
}
