//! Model checkpoints: a flat little-endian `f64` blob plus a text manifest
//! describing each array's name, shape and offset.
//!
//! ```text
//! rqvae-checkpoint v1
//! beta 0.25
//! activation relu
//! meta seed 42
//! array encoder.0.weight 64 256 0
//! array encoder.0.bias 256 16384
//! …
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Linear, Mlp};
use super::model::RqVaeModel;
use super::quantize::Codebook;
use crate::error::{Error, Result};

const MANIFEST_HEADER: &str = "rqvae-checkpoint v1";
const BLOB_MAGIC: &[u8; 8] = b"MDXRQV01";

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn push_array(blob: &mut Vec<f64>, manifest: &mut Vec<Entry>, name: String, shape: Vec<usize>, data: &[f64]) {
    manifest.push(Entry {
        name,
        shape,
        offset: blob.len(),
    });
    blob.extend_from_slice(data);
}

/// Writes `<stem>.bin` and `<stem>.manifest`. `meta` lines (such as the
/// config and seed) are copied into the manifest verbatim.
pub fn save_checkpoint(model: &RqVaeModel, stem: &Path, meta: &[(String, String)]) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (net_name, net) in [("encoder", &model.encoder), ("decoder", &model.decoder)] {
        for (k, layer) in net.layers.iter().enumerate() {
            let w = layer.weight.as_standard_layout();
            push_array(
                &mut blob,
                &mut entries,
                format!("{net_name}.{k}.weight"),
                vec![layer.fan_in(), layer.fan_out()],
                w.as_slice().expect("standard layout"),
            );
            push_array(
                &mut blob,
                &mut entries,
                format!("{net_name}.{k}.bias"),
                vec![layer.fan_out()],
                layer.bias.as_slice().expect("standard layout"),
            );
        }
    }
    for cb in &model.codebooks {
        let v = cb.vectors.as_standard_layout();
        push_array(
            &mut blob,
            &mut entries,
            format!("codebook.{}", cb.level),
            vec![cb.size(), cb.dim()],
            v.as_slice().expect("standard layout"),
        );
    }

    let mut text = format!("{MANIFEST_HEADER}\nbeta {}\n", model.beta);
    text.push_str(match model.encoder.activation {
        Activation::Relu => "activation relu\n",
        Activation::Identity => "activation identity\n",
    });
    for (k, v) in meta {
        text.push_str(&format!("meta {k} {v}\n"));
    }
    for e in &entries {
        let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        text.push_str(&format!("array {} {} {}\n", e.name, dims.join(" "), e.offset));
    }

    let mut bytes = Vec::with_capacity(BLOB_MAGIC.len() + blob.len() * 8);
    bytes.extend_from_slice(BLOB_MAGIC);
    for v in &blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin = stem.with_extension("bin");
    let man = stem.with_extension("manifest");
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    fs::write(&man, text).map_err(|e| Error::io(&man, e))
}

pub fn load_checkpoint(stem: &Path) -> Result<RqVaeModel> {
    let bin = stem.with_extension("bin");
    let man = stem.with_extension("manifest");
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() < BLOB_MAGIC.len() || &bytes[..BLOB_MAGIC.len()] != BLOB_MAGIC {
        return Err(Error::format(&bin, 0, "bad checkpoint magic"));
    }
    let values: Vec<f64> = bytes[BLOB_MAGIC.len()..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, MANIFEST_HEADER)) => {}
        _ => return Err(Error::format(&man, 1, format!("expected `{MANIFEST_HEADER}`"))),
    }
    let mut beta = None;
    let mut activation = Activation::Relu;
    let mut arrays: Vec<(String, Vec<usize>, usize)> = Vec::new();
    for (n, line) in lines {
        let bad = |m: &str| Error::format(&man, n + 1, m.to_string());
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            Some("beta") => beta = Some(fields.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad beta"))?),
            Some("activation") => {
                activation = match fields.get(1).copied() {
                    Some("relu") => Activation::Relu,
                    Some("identity") => Activation::Identity,
                    _ => return Err(bad("bad activation")),
                }
            }
            Some("meta") | None => {}
            Some("array") => {
                if fields.len() < 4 {
                    return Err(bad("array line needs name, shape and offset"));
                }
                let nums: Vec<usize> = fields[2..]
                    .iter()
                    .map(|v| v.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad array shape"))?;
                let (offset, shape) = nums.split_last().expect("len >= 2");
                let count: usize = shape.iter().product();
                if offset + count > values.len() {
                    return Err(bad("array extends past end of blob"));
                }
                arrays.push((fields[1].to_string(), shape.to_vec(), *offset));
            }
            Some(_) => return Err(bad("unrecognized manifest line")),
        }
    }
    let beta = beta.ok_or_else(|| Error::format(&man, 0, "missing beta"))?;

    let take = |name: &str| -> Result<(Vec<usize>, &[f64])> {
        let (_, shape, offset) = arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::format(&man, 0, format!("missing array `{name}`")))?;
        let count: usize = shape.iter().product();
        Ok((shape.clone(), &values[*offset..offset + count]))
    };
    let matrix = |name: &str| -> Result<Array2<f64>> {
        let (shape, data) = take(name)?;
        if shape.len() != 2 {
            return Err(Error::format(&man, 0, format!("`{name}` must be 2-D")));
        }
        Ok(Array2::from_shape_vec((shape[0], shape[1]), data.to_vec()).expect("shape checked"))
    };
    let net = |prefix: &str| -> Result<Mlp> {
        let mut layers = Vec::new();
        for k in 0.. {
            let w = format!("{prefix}.{k}.weight");
            if !arrays.iter().any(|(n, _, _)| *n == w) {
                break;
            }
            let (_, bias) = take(&format!("{prefix}.{k}.bias"))?;
            layers.push(Linear {
                weight: matrix(&w)?,
                bias: Array1::from(bias.to_vec()),
            });
        }
        Ok(Mlp { layers, activation })
    };
    let encoder = net("encoder")?;
    let decoder = net("decoder")?;
    let mut codebooks = Vec::new();
    for level in 1.. {
        let name = format!("codebook.{level}");
        if !arrays.iter().any(|(n, _, _)| *n == name) {
            break;
        }
        codebooks.push(Codebook::new(level, matrix(&name)?)?);
    }
    let model = RqVaeModel {
        encoder,
        decoder,
        codebooks,
        beta,
    };
    model.check()?;
    Ok(model)
}
