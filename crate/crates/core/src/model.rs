//! A trained ensemble bundled with the feature configuration it expects.
//!
//! On disk this is the ensemble JSON with one extra top-level `features`
//! object.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig};
use crate::gbdt::{self, TrainConfig, TreeEnsemble};
use crate::gesture::GestureClass;
use crate::par::Parallelism;
use crate::stream::Window;

#[derive(Debug, Clone, PartialEq)]
pub struct GestureModel {
    pub ensemble: TreeEnsemble,
    pub features: FeatureConfig,
    /// Free-form echo of the command that produced the model.
    pub run: Option<serde_json::Value>,
}

impl GestureModel {
    pub fn train<S: AsRef<str>>(
        rows: &[Vec<f64>],
        labels: &[S],
        features: &FeatureConfig,
        config: &TrainConfig,
        mode: Parallelism,
    ) -> Result<Self> {
        features.validate()?;
        if let Some(r) = rows.iter().find(|r| r.len() != features.dimension()) {
            return Err(Error::Training(format!(
                "row has {} features, layout expects {}",
                r.len(),
                features.dimension()
            )));
        }
        let mut ensemble = gbdt::fit_with(rows, labels, config, mode)?;
        ensemble.feature_names = Some(features.layout().names);
        Ok(GestureModel { ensemble, features: features.clone(), run: None })
    }

    /// Fails with a configuration error unless `other` produces exactly the
    /// columns this model was trained on.
    pub fn check_layout(&self, other: &FeatureConfig) -> Result<()> {
        let ours = self.features.layout();
        let theirs = other.layout();
        if ours.names != theirs.names || self.features != *other {
            return Err(Error::Config(format!(
                "feature layout mismatch: model expects {} features over [{}], input has {} over [{}]",
                ours.len(),
                sensor_list(&self.features),
                theirs.len(),
                sensor_list(other)
            )));
        }
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.ensemble.classes
    }

    /// Model classes as gestures; errors if a class is not a gesture name.
    pub fn gesture_classes(&self) -> Result<Vec<GestureClass>> {
        self.ensemble
            .classes
            .iter()
            .map(|c| c.parse().map_err(|_| Error::Config(format!("model class {c:?} is not a gesture"))))
            .collect()
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.ensemble.predict_proba(row)
    }

    /// Class index and probability vector for one window.
    pub fn classify(&self, window: &Window<'_>) -> Result<(usize, Vec<f64>)> {
        let row = features::assemble(window, &self.features)?;
        let p = self.ensemble.predict_proba(&row)?;
        Ok((gbdt::argmax(&p), p))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fmt = |e: serde_json::Error| Error::Format { offset: 0, message: e.to_string() };
        let mut value = serde_json::to_value(&self.ensemble).map_err(fmt)?;
        let features = serde_json::to_value(&self.features).map_err(fmt)?;
        value
            .as_object_mut()
            .expect("ensemble serializes to an object")
            .insert("features".into(), features);
        if let Some(run) = &self.run {
            value.as_object_mut().expect("object").insert("run".into(), run.clone());
        }
        serde_json::to_vec(&value).map_err(fmt)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ensemble = TreeEnsemble::from_bytes(bytes)?;
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Format { offset: 0, message: e.to_string() })?;
        let features: FeatureConfig = match value.get("features") {
            Some(f) => serde_json::from_value(f.clone())
                .map_err(|e| Error::Format { offset: 0, message: format!("features: {e}") })?,
            None => return Err(Error::Format { offset: 0, message: "missing \"features\" object".into() }),
        };
        let layout = features.layout();
        if ensemble.n_features != layout.len()
            || ensemble.feature_names.as_ref().is_some_and(|n| *n != layout.names)
        {
            return Err(Error::Format {
                offset: 0,
                message: "feature names disagree with the stored feature configuration".into(),
            });
        }
        Ok(GestureModel { ensemble, features, run: value.get("run").cloned() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn sensor_list(c: &FeatureConfig) -> String {
    c.sensors().iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}
