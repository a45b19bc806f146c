use spkr_core::data::{load_features, Manifest};
use spkr_core::frontend::mean_normalize;
use spkr_core::gradcam::{export_heatmap, grad_cam, HeatmapFormat, DEFAULT_LAYER};
use spkr_core::io::Checkpoint;
use spkr_core::SpeakerModel;

use crate::error::CliError;
use crate::settings::Settings;

pub fn gradcam(s: &Settings) -> Result<(), CliError> {
    let model = SpeakerModel::from_checkpoint(&Checkpoint::load(s.path("checkpoint")?)?)?;
    let path = match (s.get::<String>("input")?, s.get::<String>("manifest")?) {
        (Some(p), _) => p.into(),
        (None, Some(m)) => {
            let id: String = s.require("id")?;
            let manifest = Manifest::read(m)?;
            let u = manifest
                .get(&id)
                .ok_or_else(|| spkr_core::Error::MissingUtterances(vec![id.clone()]))?;
            u.path.clone()
        }
        (None, None) => return Err(CliError::Usage("either --input or --manifest with --id is required".into())),
    };
    let features = mean_normalize(&load_features(&path)?);
    let layer = s.or("layer", DEFAULT_LAYER.to_string())?;
    let format: HeatmapFormat = s.or("format", HeatmapFormat::Pgm)?;
    let map = grad_cam(&model, features.tensor(), &layer, s.get("target")?)?;
    let out = s.path("out")?;
    let image = if s.flag("raw")? { map.normalized() } else { map.upsampled.clone() };
    export_heatmap(&image, &out, format)?;
    let shape = |t: &spkr_core::Tensor<f32>| format!("{}x{}", t.shape()[0], t.shape()[1]);
    println!("layer={}", map.layer);
    println!("target={}", map.target);
    println!("map_shape={}", shape(&map.values));
    println!("upsampled_shape={}", shape(&map.upsampled));
    println!("out={}", out.display());
    Ok(())
}
