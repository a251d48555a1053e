//! Model checkpoint container.
//!
//! Layout: an 8-byte little-endian header length, a JSON header (architecture
//! fields plus a tensor directory with name/shape/offset/dtype), then the raw
//! little-endian IEEE-754 arrays back to back. The container holds all
//! network parameters, the full code matrix, and optionally the template
//! cloud and the unit-cube transform so inference and generation can run from
//! the file alone.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::code::ShapeCode;
use super::net::{Arch, VelocityNet};
use crate::error::{Error, Result};
use crate::geometry::{UnitCubeTransform, WeightedPointCloud};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    arch: Arch,
    tensors: Vec<TensorEntry>,
    code_ids: Vec<String>,
    #[serde(default)]
    unit_cube: Option<UnitCubeTransform>,
}

/// Everything needed to run inference and generation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: VelocityNet,
    pub codes: Vec<ShapeCode>,
    pub code_ids: Vec<String>,
    pub template: Option<WeightedPointCloud>,
    pub transform: Option<UnitCubeTransform>,
}

struct PayloadWriter {
    tensors: Vec<TensorEntry>,
    data: Vec<u8>,
}

impl PayloadWriter {
    fn new() -> Self {
        Self {
            tensors: Vec::new(),
            data: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, values: impl Iterator<Item = f64>) {
        let offset = self.data.len();
        let mut count = 0usize;
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        debug_assert_eq!(count, shape.iter().product::<usize>());
        self.tensors.push(TensorEntry {
            name: name.to_string(),
            shape,
            offset,
            dtype: "f64".to_string(),
        });
    }
}

/// Serialize a checkpoint to `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = PayloadWriter::new();
    for (name, layer) in ckpt.net.layer_names().iter().zip(ckpt.net.layers()) {
        w.push(
            &format!("{name}.weight"),
            vec![layer.weight.nrows(), layer.weight.ncols()],
            layer.weight.iter().copied(),
        );
        w.push(
            &format!("{name}.bias"),
            vec![layer.bias.len()],
            layer.bias.iter().copied(),
        );
    }
    let n_s = ckpt.codes.len();
    let n_z = ckpt.net.arch.n_z;
    w.push(
        "codes",
        vec![n_s, n_z],
        ckpt.codes.iter().flat_map(|c| c.values.iter().copied()),
    );
    if let Some(t) = &ckpt.template {
        w.push(
            "template.points",
            vec![t.len(), 3],
            t.points().iter().flat_map(|p| [p.x, p.y, p.z]),
        );
        w.push("template.weights", vec![t.len()], t.weights().iter().copied());
        if let Some(ns) = t.normals() {
            w.push(
                "template.normals",
                vec![t.len(), 3],
                ns.iter().flat_map(|n| [n.x, n.y, n.z]),
            );
        }
    }
    let header = Header {
        arch: ckpt.net.arch,
        tensors: w.tensors,
        code_ids: ckpt.code_ids.clone(),
        unit_cube: ckpt.transform,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + header_json.len() + w.data.len());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&w.data);
    std::fs::write(path, out)?;
    Ok(())
}

/// Load and validate a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let invalid = |msg: &str| Error::invalid(format!("invalid container: {msg}"));
    if bytes.len() < 8 {
        return Err(invalid("file shorter than the header length field"));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if 8 + header_len > bytes.len() {
        return Err(invalid("header length exceeds file size"));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| invalid(&format!("malformed header JSON ({e})")))?;
    header.arch.validate()?;
    let payload = &bytes[8 + header_len..];

    let tensor = |name: &str| -> Result<(&TensorEntry, Vec<f64>)> {
        let entry = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| invalid(&format!("missing tensor '{name}'")))?;
        if entry.dtype != "f64" {
            return Err(invalid(&format!("tensor '{name}' has dtype {}", entry.dtype)));
        }
        let count: usize = entry.shape.iter().product();
        let end = entry.offset + count * 8;
        if end > payload.len() {
            return Err(invalid(&format!("tensor '{name}' overruns the payload")));
        }
        let values = payload[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((entry, values))
    };

    let mut net = VelocityNet::zeros(header.arch)?;
    let names = net.layer_names();
    for (name, layer) in names.iter().zip(net.layers_mut()) {
        let (entry, values) = tensor(&format!("{name}.weight"))?;
        if entry.shape != [layer.weight.nrows(), layer.weight.ncols()] {
            return Err(invalid(&format!(
                "tensor '{name}.weight' has shape {:?}, expected {:?}",
                entry.shape,
                layer.weight.dim()
            )));
        }
        layer.weight = Array2::from_shape_vec(layer.weight.dim(), values)
            .map_err(|e| invalid(&e.to_string()))?;
        let (entry, values) = tensor(&format!("{name}.bias"))?;
        if entry.shape != [layer.bias.len()] {
            return Err(invalid(&format!("tensor '{name}.bias' has a wrong shape")));
        }
        layer.bias = Array1::from(values);
    }

    let (entry, values) = tensor("codes")?;
    if entry.shape.len() != 2 || entry.shape[1] != header.arch.n_z {
        return Err(invalid("code matrix shape does not match the architecture"));
    }
    let codes: Vec<ShapeCode> = values
        .chunks_exact(header.arch.n_z)
        .map(|c| ShapeCode::new(Array1::from(c.to_vec())))
        .collect();
    if codes.len() != entry.shape[0] {
        return Err(invalid("code matrix is truncated"));
    }

    let template = if header.tensors.iter().any(|t| t.name == "template.points") {
        let (_, pts) = tensor("template.points")?;
        let (_, wts) = tensor("template.weights")?;
        let points: Vec<Point3<f64>> = pts
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        let normals = if header.tensors.iter().any(|t| t.name == "template.normals") {
            let (_, ns) = tensor("template.normals")?;
            Some(
                ns.chunks_exact(3)
                    .map(|c| Vector3::new(c[0], c[1], c[2]))
                    .collect(),
            )
        } else {
            None
        };
        Some(WeightedPointCloud::new(points, wts, normals)?)
    } else {
        None
    };

    Ok(Checkpoint {
        net,
        codes,
        code_ids: header.code_ids,
        template,
        transform: header.unit_cube,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    fn small_arch() -> Arch {
        Arch {
            w_fa: 4,
            l_fa: 1,
            w_df: 8,
            l_df: 2,
            n_e: 1,
            negative_slope: 0.2,
            g_z: 2,
            n_z: 8,
        }
    }

    #[test]
    fn round_trip_preserves_bits() {
        let (net, codes) = init_params(small_arch(), 3, 5).unwrap();
        let template = WeightedPointCloud::uniform(
            vec![
                Point3::new(0.1, 0.2, 0.3),
                Point3::new(0.9, 0.8, 0.7),
                Point3::new(0.5, 0.5, 0.5),
            ],
            None,
        )
        .unwrap();
        let ckpt = Checkpoint {
            net,
            codes,
            code_ids: vec!["a".into(), "b".into(), "c".into()],
            template: Some(template),
            transform: Some(UnitCubeTransform {
                scale: [0.5, 0.25, 1.0],
                offset: [0.1, 0.0, -0.3],
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.net.params_digest(), ckpt.net.params_digest());
        assert_eq!(back.codes, ckpt.codes);
        assert_eq!(back.code_ids, ckpt.code_ids);
        assert_eq!(back.transform, ckpt.transform);
        assert_eq!(back.template.unwrap().len(), 3);
        // width chain invariant survives the round trip
        assert_eq!(back.net.arch.fa_input(), 3 + back.net.arch.code_channels());
        assert_eq!(back.net.fa_layers[0].weight.ncols(), back.net.arch.fa_input());
        assert_eq!(back.net.df_layers[0].weight.ncols(), back.net.arch.df_input());
        assert_eq!(back.net.df_head.weight.nrows(), 3);
    }

    #[test]
    fn corrupted_header_is_invalid_container() {
        let (net, codes) = init_params(small_arch(), 1, 5).unwrap();
        let ckpt = Checkpoint {
            net,
            codes,
            code_ids: vec!["a".into()],
            template: None,
            transform: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        for b in bytes[8..40].iter_mut() {
            *b = 0xff;
        }
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("invalid container"), "{err}");
    }
}
