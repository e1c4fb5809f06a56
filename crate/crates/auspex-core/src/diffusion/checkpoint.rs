//! Forecaster checkpoint file: magic and format version, a text manifest
//! of the architecture and schedule, named flat arrays of 32-bit
//! little-endian floats (scaler statistics first, then every parameter
//! tensor), and a trailing 64-bit checksum.

use std::collections::BTreeMap;
use std::path::Path;

use crate::binfmt::{verify_checksum, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::series::{Scaler, WindowSpec};

use super::{ForecasterModel, ModelConfig};

const MAGIC: &[u8; 4] = b"AXFC";
const FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &ForecasterModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let config = model.config();
    let mut w = ByteWriter::new();
    w.put_bytes(MAGIC);
    w.put_u32(FORMAT_VERSION);

    let manifest = format!(
        "format_version={FORMAT_VERSION}\n\
         num_metrics={}\n\
         context_len={}\n\
         forecast_len={}\n\
         stride={}\n\
         cov_dim={}\n\
         hidden={}\n\
         gru_layers={}\n\
         res_layers={}\n\
         res_channels={}\n\
         kernel_size={}\n\
         dilation_cycle={}\n\
         step_embed_dim={}\n\
         step_mlp_dim={}\n\
         t_steps={}\n\
         beta_start={}\n\
         beta_end={}\n\
         reverse_noise={}\n\
         trained={}\n",
        config.num_metrics,
        config.window.context_len,
        config.window.forecast_len,
        config.window.stride,
        config.cov_dim,
        config.hidden,
        config.gru_layers,
        config.res_layers,
        config.res_channels,
        config.kernel_size,
        config.dilation_cycle,
        config.step_embed_dim,
        config.step_mlp_dim,
        config.t_steps,
        config.beta_start,
        config.beta_end,
        config.reverse_noise,
        u8::from(model.is_trained()),
    );
    w.put_u32(manifest.len() as u32);
    w.put_bytes(manifest.as_bytes());

    let params = model.params();
    w.put_u32(2 + params.len() as u32);
    let put_array = |w: &mut ByteWriter, name: &str, values: &mut dyn Iterator<Item = f64>| {
        w.put_str(name);
        let values: Vec<f64> = values.collect();
        w.put_u64(values.len() as u64);
        for v in values {
            w.put_f32(v as f32);
        }
    };
    put_array(&mut w, "scaler.mean", &mut model.scaler().means().iter().copied());
    put_array(&mut w, "scaler.std", &mut model.scaler().stds().iter().copied());
    for i in 0..params.len() {
        put_array(&mut w, params.name(i), &mut params.tensor(i).iter().copied());
    }

    std::fs::write(path, w.finish_with_checksum()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ForecasterModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let payload = verify_checksum(&bytes)?;
    let mut r = ByteReader::new(payload);

    if r.take(4)? != MAGIC {
        return Err(Error::CorruptFile("not a forecaster checkpoint".into()));
    }
    let version = r.get_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let manifest_len = r.get_u32()? as usize;
    let manifest = std::str::from_utf8(r.take(manifest_len)?)
        .map_err(|_| Error::CorruptFile("manifest is not UTF-8".into()))?;
    let fields: BTreeMap<&str, &str> = manifest
        .lines()
        .filter_map(|line| line.split_once('='))
        .collect();
    let field = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::CorruptFile(format!("manifest is missing {key}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| Error::CorruptFile(format!("bad integer for {key}")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        field(key)?
            .parse()
            .map_err(|_| Error::CorruptFile(format!("bad float for {key}")))
    };

    let window = WindowSpec::new(
        parse_usize("context_len")?,
        parse_usize("forecast_len")?,
        parse_usize("stride")?,
    )?;
    let config = ModelConfig {
        num_metrics: parse_usize("num_metrics")?,
        window,
        cov_dim: parse_usize("cov_dim")?,
        hidden: parse_usize("hidden")?,
        gru_layers: parse_usize("gru_layers")?,
        res_layers: parse_usize("res_layers")?,
        res_channels: parse_usize("res_channels")?,
        kernel_size: parse_usize("kernel_size")?,
        dilation_cycle: parse_usize("dilation_cycle")?,
        step_embed_dim: parse_usize("step_embed_dim")?,
        step_mlp_dim: parse_usize("step_mlp_dim")?,
        t_steps: parse_usize("t_steps")?,
        beta_start: parse_f64("beta_start")?,
        beta_end: parse_f64("beta_end")?,
        reverse_noise: field("reverse_noise")?.parse()?,
    };
    let trained = field("trained")? == "1";

    let array_count = r.get_u32()? as usize;
    let mut arrays: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..array_count {
        let name = r.get_str()?;
        let len = r.get_u64()? as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(r.get_f32()? as f64);
        }
        arrays.insert(name, values);
    }
    if r.remaining() != 0 {
        return Err(Error::CorruptFile(format!("{} trailing bytes", r.remaining())));
    }

    let take_array = |arrays: &mut BTreeMap<String, Vec<f64>>, name: &str| -> Result<Vec<f64>> {
        arrays
            .remove(name)
            .ok_or_else(|| Error::CorruptFile(format!("missing array {name:?}")))
    };
    let mut arrays = arrays;
    let means = take_array(&mut arrays, "scaler.mean")?;
    let stds = take_array(&mut arrays, "scaler.std")?;
    let scaler = Scaler::from_stats(means, stds)?;

    let mut model = ForecasterModel::init(config, scaler, 0)?;
    for i in 0..model.params().len() {
        let name = model.params().name(i).to_string();
        let values = take_array(&mut arrays, &name)?;
        let tensor = model.params_mut().tensor_mut(i);
        if tensor.len() != values.len() {
            return Err(Error::CorruptFile(format!(
                "array {name:?} has {} values, expected {}",
                values.len(),
                tensor.len()
            )));
        }
        for (slot, v) in tensor.iter_mut().zip(values) {
            *slot = v;
        }
    }
    if let Some(name) = arrays.keys().next() {
        return Err(Error::CorruptFile(format!("unexpected array {name:?}")));
    }
    model.set_trained(trained);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfmt::checksum64;
    use crate::diffusion::forecast::{forecast, ForecastConfig};
    use crate::diffusion::train::tests::toy_setup;
    use crate::diffusion::train::{train, TrainConfig};

    fn trained_model() -> (ForecasterModel, crate::series::Window) {
        let (mut model, train_w, val_w) = toy_setup(31);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 1,
            batches_per_epoch: 2,
            patience: 3,
            seed: 2,
        };
        train(&mut model, &train_w, &val_w, &cfg).unwrap();
        (model, val_w[0].clone())
    }

    #[test]
    fn roundtrip_reproduces_forecasts_exactly() {
        let (model, window) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();

        assert_eq!(model.config(), loaded.config());
        assert!(loaded.is_trained());
        for i in 0..model.params().len() {
            assert_eq!(model.params().tensor(i), loaded.params().tensor(i), "param {i}");
        }

        let cfg = ForecastConfig {
            num_samples: 3,
            seed: 77,
            ..ForecastConfig::default()
        };
        let (a, ra) = forecast(&model, window.context.view(), window.covariates.view(), &cfg).unwrap();
        let (b, rb) = forecast(&loaded, window.context.view(), window.covariates.view(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn truncated_file_fails_the_checksum() {
        let (model, _) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn bumped_format_version_is_a_version_error() {
        let (model, _) = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut payload = bytes[..bytes.len() - 8].to_vec();
        payload[4..8].copy_from_slice(&2u32.to_le_bytes());
        let sum = checksum64(&payload);
        payload.extend_from_slice(&sum.to_le_bytes());
        std::fs::write(&path, payload).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }
}
