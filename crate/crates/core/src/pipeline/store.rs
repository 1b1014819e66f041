//! On-disk helpers for the run directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::radiance::{Image, PoseRecord, PosedImage};

pub(crate) fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("value serializes") + "\n"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewRecord {
    file: String,
    #[serde(flatten)]
    pose: PoseRecord,
}

/// Writes `views/NNN.ppm` and `poses.json` under `dir`.
pub fn write_views(dir: &Path, views: &[PosedImage]) -> Result<(), PipelineError> {
    let vdir = dir.join("views");
    create_dir(&vdir)?;
    let mut records = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let file = format!("views/{i:03}.ppm");
        v.image.write_ppm(&dir.join(&file)).map_err(|e| PipelineError::stage(super::Stage::Capture, e))?;
        records.push(ViewRecord {
            file,
            pose: PoseRecord::new(&v.pose, &v.intrinsics),
        });
    }
    write_json(&dir.join("poses.json"), &records)
}

/// Reads the views written by [`write_views`].
pub fn read_views(dir: &Path) -> Result<Vec<PosedImage>, PipelineError> {
    let records: Vec<ViewRecord> = read_json(&dir.join("poses.json"))?;
    records
        .iter()
        .map(|r| {
            let (pose, intrinsics) = r.pose.split().map_err(|e| PipelineError::stage(super::Stage::Capture, e))?;
            let image = Image::read_ppm(&dir.join(&r.file)).map_err(|e| PipelineError::stage(super::Stage::Capture, e))?;
            if image.width != intrinsics.width || image.height != intrinsics.height {
                return Err(PipelineError::Format {
                    path: r.file.clone(),
                    msg: "image size does not match the intrinsics".into(),
                });
            }
            Ok(PosedImage {
                image,
                pose,
                intrinsics,
            })
        })
        .collect()
}
