//! Model persistence: the parameter tensors as a GLYF stream, with the
//! architecture recorded in a JSON sidecar next to it (`<stem>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::tensor::checkpoint as stream;

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    stream::save(path, &model.params())?;
    let sidecar = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&model.cfg)
        .map_err(|e| Error::InvalidConfig(format!("config serialization failed: {e}")))?;
    text.push('\n');
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| {
        Error::MalformedCheckpoint(format!("{}: bad config sidecar: {e}", sidecar.display()))
    })?;
    cfg.validate()?;
    let tensors = stream::load::<f32>(path)?;
    // Seed is irrelevant here: every parameter is overwritten below.
    let mut model = build_model(&cfg, 0)?;
    let expected = model.params().len();
    if tensors.len() != expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {} tensors, config {:?} filters with {} hidden units expects {}",
            tensors.len(),
            cfg.filters,
            cfg.hidden,
            expected
        )));
    }
    for (i, (param, tensor)) in model.params_mut().into_iter().zip(tensors).enumerate() {
        if param.shape() != tensor.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {i}: checkpoint shape {:?} vs model shape {:?}",
                tensor.shape(),
                param.shape()
            )));
        }
        *param = tensor;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NUM_BLOCKS;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            input_h: 16,
            input_w: 16,
            filters: [4, 4, 8, 8],
            kernel: 3,
            reduction: 4,
            spatial_kernel: 3,
            hidden: 8,
            threshold: 0.5,
        }
    }

    #[test]
    fn round_trip_preserves_config_and_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.glyf");
        let model = build_model(&tiny_cfg(), 42).unwrap();
        save_checkpoint(&model, &path).unwrap();
        assert!(sidecar_path(&path).ends_with("model.json"));

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.params().len(), NUM_BLOCKS * 8 + 4);
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn same_seed_builds_write_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.glyf"), dir.path().join("b.glyf"));
        save_checkpoint(&build_model(&tiny_cfg(), 7).unwrap(), &p1).unwrap();
        save_checkpoint(&build_model(&tiny_cfg(), 7).unwrap(), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(
            fs::read(sidecar_path(&p1)).unwrap(),
            fs::read(sidecar_path(&p2)).unwrap()
        );
    }

    #[test]
    fn mismatched_architecture_names_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.glyf");
        save_checkpoint(&build_model(&tiny_cfg(), 1).unwrap(), &path).unwrap();

        // Rewrite the sidecar to claim wider filters than the stream holds.
        let mut other = tiny_cfg();
        other.filters = [8, 8, 8, 8];
        let text = serde_json::to_string_pretty(&other).unwrap();
        fs::write(sidecar_path(&path), text).unwrap();

        match load_checkpoint(&path).unwrap_err() {
            Error::CheckpointMismatch(msg) => {
                assert!(msg.contains("[4, 1, 3, 3]"), "{msg}");
                assert!(msg.contains("[8, 1, 3, 3]"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.glyf");
        save_checkpoint(&build_model(&tiny_cfg(), 1).unwrap(), &path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::Io { .. }
        ));
    }

    #[test]
    fn corrupt_sidecar_is_reported_as_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.glyf");
        save_checkpoint(&build_model(&tiny_cfg(), 1).unwrap(), &path).unwrap();
        fs::write(sidecar_path(&path), "{not json").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::MalformedCheckpoint(_)
        ));
    }
}
