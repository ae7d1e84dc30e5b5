//! On-disk formats.
//!
//! Model format "LRCM v1": a directory holding `manifest.json` plus one
//! `.bin` tensor blob per weighted layer. Tensor blobs ("LRCT"): 16-byte
//! header = magic `LRCT`, u32 LE version (1), u32 LE rank, u32 LE reserved
//! (0), then rank u32 LE dims, then a row-major little-endian IEEE-754
//! float32 payload.
//!
//! Dataset format "TOYD v1": a single file with magic `TOYD`, u32 version,
//! u32 n, u32 H, u32 W, u32 C, u32 num_classes, u64 seed, then n images as
//! float32 and n labels as u8.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LoadError, Result};
use crate::model::{ConvLayer, Layer, Network, Tensor, ToyDataset};
use crate::numerics::Matrix;

const TENSOR_MAGIC: &[u8; 4] = b"LRCT";
const DATASET_MAGIC: &[u8; 4] = b"TOYD";
const FORMAT_VERSION: u32 = 1;

fn load_err(path: &Path, kind: LoadError) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        kind,
    }
}

// ---- tensor blobs ----------------------------------------------------

/// Write a tensor blob; data is cast to f32 on the way out.
pub fn write_tensor_blob(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    assert_eq!(expected, data.len(), "blob dims/data mismatch");
    let mut buf = Vec::with_capacity(16 + 4 * dims.len() + 4 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a tensor blob back as (dims, f64 data).
pub fn read_tensor_blob(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize, what: &str| -> Result<Vec<u8>> {
        if *off + n > bytes.len() {
            return Err(load_err(path, LoadError::Truncated(what.into())));
        }
        let slice = bytes[*off..*off + n].to_vec();
        *off += n;
        Ok(slice)
    };

    let magic = take(&mut off, 4, "missing magic")?;
    if magic != TENSOR_MAGIC {
        return Err(load_err(path, LoadError::BadMagic { expected: "LRCT" }));
    }
    let version = u32::from_le_bytes(take(&mut off, 4, "missing version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(load_err(path, LoadError::BadVersion(version)));
    }
    let rank = u32::from_le_bytes(take(&mut off, 4, "missing rank")?.try_into().unwrap()) as usize;
    let _reserved = take(&mut off, 4, "missing reserved")?;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = u32::from_le_bytes(
            take(&mut off, 4, &format!("missing dim {i}"))?
                .try_into()
                .unwrap(),
        );
        dims.push(d as usize);
    }
    let count: usize = dims.iter().product();
    let payload = take(&mut off, 4 * count, "payload shorter than declared dims")?;
    if off != bytes.len() {
        return Err(load_err(
            path,
            LoadError::ShapeMismatch(format!(
                "{} trailing bytes after declared payload",
                bytes.len() - off
            )),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((dims, data))
}

// ---- model directories -----------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    name: String,
    seed: u64,
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerSpec {
    Conv {
        k: usize,
        c: usize,
        d: usize,
        stride: usize,
        weights: TensorRef,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    FullyConnected {
        weights: TensorRef,
    },
    Softmax,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRef {
    file: String,
    dims: Vec<usize>,
}

/// Save a network as an LRCM v1 directory.
pub fn save_network(net: &Network, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut specs = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let spec = match layer {
            Layer::Conv(conv) => {
                let file = format!("layer{i:03}.bin");
                let dims = vec![conv.weights.rows(), conv.weights.cols()];
                write_tensor_blob(&dir.join(&file), &dims, conv.weights.data())?;
                LayerSpec::Conv {
                    k: conv.k,
                    c: conv.c,
                    d: conv.d,
                    stride: conv.stride,
                    weights: TensorRef { file, dims },
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool { size, stride } => LayerSpec::MaxPool {
                size: *size,
                stride: *stride,
            },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::FullyConnected { weights } => {
                let file = format!("layer{i:03}.bin");
                let dims = vec![weights.rows(), weights.cols()];
                write_tensor_blob(&dir.join(&file), &dims, weights.data())?;
                LayerSpec::FullyConnected {
                    weights: TensorRef { file, dims },
                }
            }
            Layer::Softmax => LayerSpec::Softmax,
        };
        specs.push(spec);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: net.name.clone(),
        seed: net.seed,
        input_shape: [net.input_shape.0, net.input_shape.1, net.input_shape.2],
        layers: specs,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Load an LRCM v1 directory back into a network.
pub fn load_network(dir: &Path) -> Result<Network> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(load_err(
            &manifest_path,
            LoadError::BadVersion(manifest.format_version),
        ));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for spec in &manifest.layers {
        let layer = match spec {
            LayerSpec::Conv {
                k,
                c,
                d,
                stride,
                weights,
            } => {
                let m = read_weight_matrix(dir, weights)?;
                Layer::Conv(ConvLayer::new(*k, *c, *d, *stride, m)?)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool { size, stride } => Layer::MaxPool {
                size: *size,
                stride: *stride,
            },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::FullyConnected { weights } => Layer::FullyConnected {
                weights: read_weight_matrix(dir, weights)?,
            },
            LayerSpec::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    let [h, w, c] = manifest.input_shape;
    Network::new((h, w, c), layers, manifest.name, manifest.seed)
}

fn read_weight_matrix(dir: &Path, tref: &TensorRef) -> Result<Matrix> {
    let path = dir.join(&tref.file);
    let (dims, data) = read_tensor_blob(&path)?;
    if dims != tref.dims {
        return Err(load_err(
            &path,
            LoadError::ShapeMismatch(format!(
                "manifest declares dims {:?}, blob has {:?}",
                tref.dims, dims
            )),
        ));
    }
    if dims.len() != 2 {
        return Err(load_err(
            &path,
            LoadError::ShapeMismatch(format!("expected rank-2 weights, got {dims:?}")),
        ));
    }
    Matrix::new(dims[0], dims[1], data)
}

// ---- datasets ---------------------------------------------------------

pub fn save_dataset(data: &ToyDataset, path: &Path) -> Result<()> {
    let n = data.len();
    let (h, w, c) = data
        .images
        .first()
        .map(|t| t.dims3())
        .transpose()?
        .unwrap_or((data.hw, data.hw, 1));
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    buf.extend_from_slice(&(data.num_classes as u32).to_le_bytes());
    buf.extend_from_slice(&data.seed.to_le_bytes());
    for img in &data.images {
        for &v in img.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&data.labels);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ToyDataset> {
    let bytes = fs::read(path)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize, what: &str| -> Result<Vec<u8>> {
        if *off + n > bytes.len() {
            return Err(load_err(path, LoadError::Truncated(what.into())));
        }
        let slice = bytes[*off..*off + n].to_vec();
        *off += n;
        Ok(slice)
    };
    let magic = take(&mut off, 4, "missing magic")?;
    if magic != DATASET_MAGIC {
        return Err(load_err(path, LoadError::BadMagic { expected: "TOYD" }));
    }
    let mut read_u32 = |what: &str| -> Result<u32> {
        Ok(u32::from_le_bytes(
            take(&mut off, 4, what)?.try_into().unwrap(),
        ))
    };
    let version = read_u32("missing version")?;
    if version != FORMAT_VERSION {
        return Err(load_err(path, LoadError::BadVersion(version)));
    }
    let n = read_u32("missing n")? as usize;
    let h = read_u32("missing H")? as usize;
    let w = read_u32("missing W")? as usize;
    let c = read_u32("missing C")? as usize;
    let num_classes = read_u32("missing num_classes")? as usize;
    let seed = u64::from_le_bytes(take(&mut off, 8, "missing seed")?.try_into().unwrap());

    let img_len = h * w * c;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let payload = take(&mut off, 4 * img_len, &format!("image {i} payload"))?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        images.push(Tensor::new(vec![h, w, c], data)?);
    }
    let labels = take(&mut off, n, "labels")?;
    if off != bytes.len() {
        return Err(load_err(
            path,
            LoadError::ShapeMismatch(format!("{} trailing bytes", bytes.len() - off)),
        ));
    }
    if labels.iter().any(|&l| l as usize >= num_classes) {
        return Err(load_err(
            path,
            LoadError::ShapeMismatch("label out of class range".into()),
        ));
    }
    Ok(ToyDataset {
        images,
        labels,
        num_classes,
        hw: h,
        seed,
    })
}

/// Convenience wrappers mirroring the library naming.
pub fn save(net: &Network, dir: impl AsRef<Path>) -> Result<()> {
    save_network(net, dir.as_ref())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Network> {
    load_network(dir.as_ref())
}
