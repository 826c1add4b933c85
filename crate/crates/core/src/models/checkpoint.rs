//! Model checkpoint: `b"GCMD"`, version `u32`, header length `u64`, a JSON
//! header with everything needed to rebuild the model, then the parameter
//! checkpoint of the network.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::continuous::ContinuousModel;
use super::discrete::{DiscreteModel, DiscreteModelConfig};
use super::{ContinuousKind, ModelError};
use crate::features::Normalizer;
use crate::nn::{read_network, write_network};

pub const MAGIC: &[u8; 4] = b"GCMD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum Header {
    Discrete {
        config: DiscreteModelConfig,
        normalizer: Normalizer,
        temperature: Option<Vec<f64>>,
        seed: u64,
    },
    Continuous {
        kind: ContinuousKind,
        horizons: Vec<f64>,
        normalizer: Normalizer,
        seed: u64,
    },
}

/// Either kind of trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Discrete(DiscreteModel),
    Continuous(ContinuousModel),
}

fn write_with_header<W: Write>(mut w: W, header: &Header, model: impl FnOnce(&mut W) -> Result<(), ModelError>) -> Result<(), ModelError> {
    let json = serde_json::to_vec(header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    model(&mut w)
}

pub fn write_discrete<W: Write>(w: W, m: &DiscreteModel) -> Result<(), ModelError> {
    let header = Header::Discrete {
        config: m.config.clone(),
        normalizer: m.normalizer.clone(),
        temperature: m.temperature.clone(),
        seed: m.seed,
    };
    write_with_header(w, &header, |w| Ok(write_network(w, m.specs(), &m.params)?))
}

pub fn write_continuous<W: Write>(w: W, m: &ContinuousModel) -> Result<(), ModelError> {
    let header = Header::Continuous {
        kind: m.kind,
        horizons: m.horizons.clone(),
        normalizer: m.normalizer.clone(),
        seed: m.seed,
    };
    write_with_header(w, &header, |w| Ok(write_network(w, &m.specs, &m.params)?))
}

pub fn write_model<W: Write>(w: W, m: &StoredModel) -> Result<(), ModelError> {
    match m {
        StoredModel::Discrete(d) => write_discrete(w, d),
        StoredModel::Continuous(c) => write_continuous(w, c),
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<StoredModel, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| ModelError::Checkpoint("header too large".into()))?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let (specs, params) = read_network(r)?;
    match header {
        Header::Discrete {
            config,
            normalizer,
            temperature,
            seed,
        } => {
            if specs != config.layer_specs() {
                return Err(ModelError::Checkpoint("network does not match the stored configuration".into()));
            }
            Ok(StoredModel::Discrete(DiscreteModel::from_parts(
                config,
                normalizer,
                params,
                temperature,
                seed,
            )?))
        }
        Header::Continuous {
            kind,
            horizons,
            normalizer,
            seed,
        } => {
            let mut m = ContinuousModel::new(kind, horizons, normalizer, seed)?;
            if specs != m.specs {
                return Err(ModelError::Checkpoint("network does not match the stored kind".into()));
            }
            m.params = params;
            Ok(StoredModel::Continuous(m))
        }
    }
}

pub fn read_discrete<R: Read>(r: R) -> Result<DiscreteModel, ModelError> {
    match read_model(r)? {
        StoredModel::Discrete(m) => Ok(m),
        StoredModel::Continuous(_) => Err(ModelError::Checkpoint("expected a discrete model".into())),
    }
}

pub fn read_continuous<R: Read>(r: R) -> Result<ContinuousModel, ModelError> {
    match read_model(r)? {
        StoredModel::Continuous(m) => Ok(m),
        StoredModel::Discrete(_) => Err(ModelError::Checkpoint("expected a continuous model".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::test_support::cv_sample;
    use crate::features::{ego_transform, trajectory_features};
    use crate::grid::Grid;
    use crate::models::DiscreteKind;

    #[test]
    fn discrete_round_trip_is_bitwise() {
        let grid = Grid::new(33, 0.35).unwrap();
        let mut cfg = DiscreteModelConfig::reference(DiscreteKind::DT, grid, vec![0.5, 1.0]);
        cfg.trajectory_layers = 1;
        cfg.trajectory_width = 4;
        let s = [cv_sample([1.0, 0.0], &[0.5, 1.0]), cv_sample([0.0, 1.0], &[0.5, 1.0])];
        let raw: Vec<_> = s.iter().map(|x| trajectory_features(x).unwrap()).collect();
        let mut m = DiscreteModel::new(cfg, Normalizer::fit(&raw).unwrap(), 9).unwrap();
        m.temperature = Some(vec![1.5, 0.75]);
        let mut buf = Vec::new();
        write_discrete(&mut buf, &m).unwrap();
        let back = read_discrete(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_discrete(&mut again, &back).unwrap();
        assert_eq!(again, buf);
        assert!(read_continuous(&buf[..]).is_err());
    }

    #[test]
    fn continuous_round_trip() {
        let s = [cv_sample([1.0, 0.0], &[0.5]), cv_sample([0.0, 1.0], &[0.5])];
        let raw: Vec<_> = s.iter().map(|x| ego_transform(x, false).unwrap().features).collect();
        let m = ContinuousModel::new(ContinuousKind::CT, vec![0.5], Normalizer::fit(&raw).unwrap(), 2).unwrap();
        let mut buf = Vec::new();
        write_continuous(&mut buf, &m).unwrap();
        assert_eq!(read_continuous(&buf[..]).unwrap(), m);
        buf[0] = b'x';
        assert!(read_model(&buf[..]).is_err());
    }
}
