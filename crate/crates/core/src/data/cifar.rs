//! CIFAR-style binary batches: each record is one label byte followed by
//! `C·H·W` channel-major pixel bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CifarMeta {
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl CifarMeta {
    pub const CIFAR10: CifarMeta = CifarMeta {
        num_classes: 10,
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn record_len(&self) -> usize {
        1 + self.channels * self.height * self.width
    }
}

pub(crate) fn parse_records(bytes: &[u8], meta: &CifarMeta, labels: &mut Vec<usize>, features: &mut Vec<f32>) -> Result<()> {
    let rec = meta.record_len();
    if bytes.len() % rec != 0 {
        return Err(Error::format(
            (bytes.len() - bytes.len() % rec) as u64,
            format!("file length {} is not a multiple of the {rec}-byte record", bytes.len()),
        ));
    }
    for (r, chunk) in bytes.chunks_exact(rec).enumerate() {
        let label = chunk[0] as usize;
        if label >= meta.num_classes {
            return Err(Error::format(
                (r * rec) as u64,
                format!("label {label} outside [0, {})", meta.num_classes),
            ));
        }
        labels.push(label);
        features.extend(chunk[1..].iter().map(|&p| p as f32 / 255.0));
    }
    Ok(())
}

/// Loads and concatenates binary batch files, scaling pixels to `[0, 1]`.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], meta: CifarMeta) -> Result<LabeledDataset> {
    if meta.channels == 0 || meta.height == 0 || meta.width == 0 {
        return Err(Error::Parameter {
            name: "cifar_meta",
            msg: format!("zero extent in {meta:?}"),
        });
    }
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        parse_records(&bytes, &meta, &mut labels, &mut features)?;
    }
    LabeledDataset::new(
        "cifar",
        vec![meta.channels, meta.height, meta.width],
        meta.num_classes,
        features,
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let mut bytes = vec![7u8];
        bytes.extend(std::iter::repeat(255u8).take(3072));
        let (mut l, mut f) = (Vec::new(), Vec::new());
        parse_records(&bytes, &CifarMeta::CIFAR10, &mut l, &mut f).unwrap();
        assert_eq!(l, vec![7]);
        assert_eq!(f.len(), 3072);
        assert!(f.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ragged_length_is_format_error() {
        let bytes = vec![0u8; 3074];
        let (mut l, mut f) = (Vec::new(), Vec::new());
        assert!(matches!(
            parse_records(&bytes, &CifarMeta::CIFAR10, &mut l, &mut f),
            Err(Error::Format { offset: 3073, .. })
        ));
    }
}
