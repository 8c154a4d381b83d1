use std::fs;
use std::path::{Path, PathBuf};

use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::archive::{hex_digest, write_atomic, ArchiveTensor, WeightArchive};
use crate::net::{SegmentationModelSpec, SegmentationNetwork};

/// Feature-layer index ranges of the five encoder stages.
const STAGE_ENDS: [usize; 5] = [2, 4, 7, 14, 19];

fn stage_block(feature: usize) -> Option<(usize, usize)> {
    let stage = STAGE_ENDS.iter().position(|&end| feature < end)?;
    let start = if stage == 0 { 0 } else { STAGE_ENDS[stage - 1] };
    Some((stage, feature - start))
}

/// Maps a torchvision `mobilenet_v2` state-dict key to the canonical
/// encoder name, or `None` for keys with no encoder counterpart
/// (classifier, `num_batches_tracked`).
///
/// Any prefix before `features.` is ignored, so keys exported from a
/// wrapping module map too.
pub fn torchvision_to_canonical(key: &str) -> Option<String> {
    let rest = &key[key.find("features.")? + "features.".len()..];
    let (feature, rest) = rest.split_once('.')?;
    let feature: usize = feature.parse().ok()?;
    let (stage, block) = stage_block(feature)?;
    let (module, leaf) = rest.rsplit_once('.')?;
    if !matches!(leaf, "weight" | "bias" | "running_mean" | "running_var") {
        return None;
    }
    let layer = if feature == 0 || feature == 18 {
        // ConvBNReLU: 0 = conv, 1 = bn
        match module {
            "0" => "conv",
            "1" => "bn",
            _ => return None,
        }
    } else if feature == 1 {
        // expansion factor 1: depthwise, then projection
        match module {
            "conv.0.0" => "dw.conv",
            "conv.0.1" => "dw.bn",
            "conv.1" => "project.conv",
            "conv.2" => "project.bn",
            _ => return None,
        }
    } else {
        match module {
            "conv.0.0" => "expand.conv",
            "conv.0.1" => "expand.bn",
            "conv.1.0" => "dw.conv",
            "conv.1.1" => "dw.bn",
            "conv.2" => "project.conv",
            "conv.3" => "project.bn",
            _ => return None,
        }
    };
    Some(format!("encoder.{stage}.{block}.{layer}.{leaf}"))
}

fn format_err(path: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes every tensor of a safetensors buffer. Integer tensors (batch
/// counters) carry no weights and decode to `None`.
pub fn read_safetensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Option<ArchiveTensor>)>, HarnessError> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| format_err(path, e.to_string()))?;
    let mut out = Vec::new();
    for (name, view) in st.tensors() {
        let shape = view.shape().to_vec();
        let data = view.data();
        let tensor = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Some(ArchiveTensor::from_scalars(shape, &v))
            }
            Dtype::F64 => {
                let v: Vec<f64> = data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Some(ArchiveTensor::from_scalars(shape, &v))
            }
            Dtype::I64 | Dtype::I32 => None,
            other => return Err(format_err(path, format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        out.push((name, tensor));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// What a conversion did; also written as a JSON sidecar next to the archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub source: PathBuf,
    pub source_sha256: String,
    pub converted_at: String,
    pub tensors: usize,
    /// Source keys without an encoder counterpart.
    pub skipped: Vec<String>,
}

/// Converts a torchvision MobileNetV2 safetensors checkpoint into a `.wts`
/// encoder archive with canonical names, checking that every encoder tensor
/// is present with the expected shape.
pub fn convert_safetensors(src: &Path, dst: &Path) -> Result<ConversionReport, HarnessError> {
    let bytes = fs::read(src).map_err(io_err(src))?;
    let tensors = read_safetensors(&bytes, src)?;

    let template = SegmentationNetwork::<f32>::build(&SegmentationModelSpec::mobilenet_v2(false), None)?
        .encoder_archive();
    let mut archive = WeightArchive::new();
    let mut skipped = Vec::new();
    for (key, tensor) in tensors {
        let (Some(name), Some(tensor)) = (torchvision_to_canonical(&key), tensor) else {
            skipped.push(key);
            continue;
        };
        let expected = template
            .get(&name)
            .ok_or_else(|| format_err(src, format!("`{key}` maps to unknown tensor `{name}`")))?;
        if expected.shape != tensor.shape {
            return Err(format_err(
                src,
                format!("`{key}` has shape {:?}, expected {:?}", tensor.shape, expected.shape),
            ));
        }
        archive.insert(&name, tensor);
    }
    let missing: Vec<&String> = template.names().filter(|n| archive.get(n).is_none()).collect();
    if !missing.is_empty() {
        return Err(format_err(src, format!("missing encoder tensors: {missing:?}")));
    }

    let report = ConversionReport {
        source: src.to_path_buf(),
        source_sha256: hex_digest(&bytes),
        converted_at: chrono::Utc::now().to_rfc3339(),
        tensors: archive.len(),
        skipped,
    };
    archive.metadata = serde_json::to_string(&report).expect("report serializes");
    archive.save(dst)?;
    let sidecar = dst.with_extension("json");
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_atomic(&sidecar, &json).map_err(io_err(&sidecar))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn representative_keys() {
        let cases = [
            ("features.0.0.weight", Some("encoder.0.0.conv.weight")),
            ("features.0.1.running_var", Some("encoder.0.0.bn.running_var")),
            ("features.1.conv.0.0.weight", Some("encoder.0.1.dw.conv.weight")),
            ("features.1.conv.2.bias", Some("encoder.0.1.project.bn.bias")),
            ("features.2.conv.0.0.weight", Some("encoder.1.0.expand.conv.weight")),
            ("features.4.conv.1.1.weight", Some("encoder.2.0.dw.bn.weight")),
            ("features.13.conv.3.running_mean", Some("encoder.3.6.project.bn.running_mean")),
            ("features.18.0.weight", Some("encoder.4.4.conv.weight")),
            ("model.features.18.1.bias", Some("encoder.4.4.bn.bias")),
            ("features.3.conv.1.1.num_batches_tracked", None),
            ("classifier.1.weight", None),
            ("features.19.0.weight", None),
        ];
        for (key, want) in cases {
            assert_eq!(torchvision_to_canonical(key).as_deref(), want, "{key}");
        }
    }
}
