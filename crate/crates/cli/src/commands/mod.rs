mod audit;
mod corpus;
mod gradcam;
mod scoring;
mod train;

use spkr_core::eval::report::build_pool;
use spkr_core::frontend::Offset;

use crate::error::CliError;
use crate::settings::Settings;

pub fn dispatch(name: &str, s: &Settings) -> Result<(), CliError> {
    match name {
        "synth" => corpus::synth(s),
        "features" => corpus::features(s),
        "truncate" => corpus::truncate(s),
        "train" => train::train(s),
        "embed" => scoring::embed(s),
        "eval" => scoring::eval(s),
        "audit" => audit::audit(s),
        "gradcam" => gradcam::gradcam(s),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn pool(s: &Settings) -> Result<rayon::ThreadPool, CliError> {
    let n: usize = s.or("workers", 1)?;
    if n == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    Ok(build_pool(n)?)
}

fn offset(s: &Settings) -> Result<Offset, CliError> {
    match s.or("offset", "start".to_string())?.as_str() {
        "start" => Ok(Offset::Start),
        "random" => Ok(Offset::Random { seed: s.or("seed", 0)? }),
        other => Err(CliError::Usage(format!("--offset must be start or random, got `{other}`"))),
    }
}
