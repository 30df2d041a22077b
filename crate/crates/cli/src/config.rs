use std::path::{Path, PathBuf};

use hybrid_snn::energy::EnergyConstants;
use hybrid_snn::events::{load_events, EventFormat, EventStream};
use hybrid_snn::grad::ToyTrainConfig;
use hybrid_snn::hybrid::HybridConfig;
use hybrid_snn::Error;
use serde::Deserialize;

/// Everything a run needs. Every field has a default, so an empty file is a
/// valid configuration; unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub hybrid: HybridConfig,
    pub energy: EnergyConstants,
    pub toy: ToyTrainConfig,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub events: Option<PathBuf>,
    /// Guessed from the extension when absent.
    pub event_format: Option<EventFormat>,
    pub width: Option<u16>,
    pub height: Option<u16>,
    /// Model description (JSON).
    pub model: Option<PathBuf>,
    /// Weight container.
    pub weights: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub cameras: Vec<PathBuf>,
    pub joints: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, Error> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        let d = &mut cfg.data;
        for p in [&mut d.events, &mut d.model, &mut d.weights, &mut d.labels]
            .into_iter()
            .flatten()
            .chain(d.cameras.iter_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = cfg.out_dir.as_mut().filter(|o| o.is_relative()) {
            *o = base.join(&*o);
        }
        cfg.hybrid.validate()?;
        cfg.energy.validate()?;
        Ok(cfg)
    }

    pub fn events(&self) -> Result<EventStream, Error> {
        let path = self
            .data
            .events
            .as_deref()
            .ok_or_else(|| Error::Config("no event file configured (data.events)".into()))?;
        let format = match self.data.event_format {
            Some(f) => f,
            None if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv")) =>
            {
                EventFormat::Csv
            }
            None => EventFormat::Binary,
        };
        let geometry = match (self.data.width, self.data.height) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "data.width and data.height go together".into(),
                ))
            }
        };
        load_events(path, format, geometry)
    }
}
