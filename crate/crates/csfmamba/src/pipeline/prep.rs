//! Scene-to-model input preparation, shared by training (which fits the
//! transform) and evaluation or mapping (which replay a stored one).

use super::config::PipelineConfig;
use crate::data::{CubeKind, Dataset, PreprocessModel, RasterCube};
use crate::error::{Error, Result};

fn check_model_dims(cfg: &PipelineConfig, hsi: &RasterCube, lidar: &RasterCube) -> Result<()> {
    if hsi.channels() != cfg.model.hsi_channels || lidar.channels() != cfg.model.lidar_channels {
        return Err(Error::shape(format!(
            "prepared inputs carry {} + {} channels but the model expects {} + {}",
            hsi.channels(),
            lidar.channels(),
            cfg.model.hsi_channels,
            cfg.model.lidar_channels
        )));
    }
    Ok(())
}

fn truncate_raw(ds: &Dataset, cfg: &PipelineConfig) -> Result<(RasterCube, RasterCube)> {
    let want = cfg.model.hsi_channels;
    if want > ds.hsi.channels() {
        return Err(Error::shape(format!(
            "cannot truncate {} raw bands to {want}",
            ds.hsi.channels()
        )));
    }
    let keep: Vec<usize> = (0..want).collect();
    let hsi = ds.hsi.select_channels(&keep, CubeKind::Hsi)?;
    Ok((hsi, ds.lidar.clone()))
}

/// Fits preprocessing on the scene (or truncates raw bands when bypassed)
/// and returns the transform for the checkpoint along with both prepared
/// rasters.
pub fn fit_inputs(
    ds: &Dataset,
    cfg: &PipelineConfig,
) -> Result<(Option<PreprocessModel>, RasterCube, RasterCube)> {
    let (pp, hsi, lidar) = if cfg.bypass_preprocess {
        let (hsi, lidar) = truncate_raw(ds, cfg)?;
        (None, hsi, lidar)
    } else {
        let (model, hsi, lidar) =
            PreprocessModel::fit(&ds.hsi, &ds.lidar, &ds.labels, &cfg.preprocess)?;
        (Some(model), hsi, lidar)
    };
    check_model_dims(cfg, &hsi, &lidar)?;
    Ok((pp, hsi, lidar))
}

/// Replays a stored transform on a raw scene. `preprocess` must be present
/// exactly when the config did not bypass preprocessing.
pub fn replay_inputs(
    ds: &Dataset,
    cfg: &PipelineConfig,
    preprocess: Option<&PreprocessModel>,
) -> Result<(RasterCube, RasterCube)> {
    let (hsi, lidar) = match (cfg.bypass_preprocess, preprocess) {
        (true, None) => truncate_raw(ds, cfg)?,
        (false, Some(pp)) => pp.apply(&ds.hsi, &ds.lidar)?,
        (true, Some(_)) => {
            return Err(Error::invalid(
                "checkpoint stores a preprocessing transform but the config bypasses it",
            ))
        }
        (false, None) => {
            return Err(Error::invalid(
                "checkpoint lacks the preprocessing transform its config requires",
            ))
        }
    };
    check_model_dims(cfg, &hsi, &lidar)?;
    Ok((hsi, lidar))
}

/// Header-level compatibility between a config and a dataset.
pub fn check_dataset(ds: &Dataset, cfg: &PipelineConfig) -> Result<()> {
    if ds.header.num_classes != cfg.model.num_classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes but the model expects {}",
            ds.header.num_classes, cfg.model.num_classes
        )));
    }
    if !cfg.bypass_preprocess && cfg.preprocess.mi_top_bands > ds.header.hsi_bands {
        return Err(Error::Dataset(format!(
            "band selection wants {} of {} bands",
            cfg.preprocess.mi_top_bands, ds.header.hsi_bands
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, LabelMap, SyntheticSpec};

    fn scene() -> Dataset {
        let spec = SyntheticSpec {
            seed: 5,
            height: 12,
            width: 10,
            num_classes: 3,
            hsi_bands: 20,
            noise_sigma: 0.05,
        };
        let (hsi, lidar, labels) = make_synthetic(&spec).unwrap();
        Dataset {
            header: crate::data::DatasetHeader {
                name: "scene".into(),
                height: 12,
                width: 10,
                hsi_bands: 20,
                lidar_channels: 1,
                num_classes: 3,
                dtype: "f32le".into(),
                layout: "band-sequential".into(),
            },
            hsi,
            lidar,
            labels,
        }
    }

    fn desk_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::desk(3, 1);
        cfg.preprocess.mi_top_bands = 12;
        cfg.preprocess.pca_components = cfg.model.hsi_channels;
        cfg
    }

    #[test]
    fn fitted_inputs_match_the_model_channels() {
        let ds = scene();
        let cfg = desk_cfg();
        let (pp, hsi, lidar) = fit_inputs(&ds, &cfg).unwrap();
        assert!(pp.is_some());
        assert_eq!(hsi.channels(), cfg.model.hsi_channels);
        assert_eq!(lidar.channels(), cfg.model.lidar_channels);

        // replay reproduces the fitted transform bit for bit
        let (h2, l2) = replay_inputs(&ds, &cfg, pp.as_ref()).unwrap();
        assert_eq!(hsi.values(), h2.values());
        assert_eq!(lidar.values(), l2.values());
    }

    #[test]
    fn bypass_truncates_raw_bands() {
        let ds = scene();
        let mut cfg = desk_cfg();
        cfg.bypass_preprocess = true;
        cfg.model.lidar_channels = 1;
        let (pp, hsi, lidar) = fit_inputs(&ds, &cfg).unwrap();
        assert!(pp.is_none());
        assert_eq!(hsi.channels(), cfg.model.hsi_channels);
        // first band passes through untouched
        assert_eq!(hsi.channel_plane(0), ds.hsi.channel_plane(0));
        assert_eq!(lidar.values(), ds.lidar.values());
    }

    #[test]
    fn replay_demands_a_transform_exactly_when_required() {
        let ds = scene();
        let cfg = desk_cfg();
        assert!(replay_inputs(&ds, &cfg, None).is_err());
        let (pp, _, _) = fit_inputs(&ds, &cfg).unwrap();
        let mut bypass = cfg.clone();
        bypass.bypass_preprocess = true;
        bypass.model.lidar_channels = 1;
        assert!(replay_inputs(&ds, &bypass, pp.as_ref()).is_err());
    }

    #[test]
    fn header_mismatches_are_reported() {
        let ds = scene();
        let mut cfg = desk_cfg();
        cfg.model.num_classes = 7;
        assert!(check_dataset(&ds, &cfg).is_err());

        let mut cfg = desk_cfg();
        cfg.preprocess.mi_top_bands = 99;
        assert!(check_dataset(&ds, &cfg).is_err());

        // labels with a different extent never reach this layer; channel
        // mismatches surface as shape errors from fitting
        let mut ds2 = scene();
        ds2.labels = LabelMap::new(
            12,
            10,
            ds.labels.labels().to_vec(),
            ds.labels.num_classes(),
        )
        .unwrap();
        assert!(check_dataset(&ds2, &desk_cfg()).is_ok());
    }
}
