//! Model persistence: a line-oriented ASCII manifest (spec fields, then one
//! `param <name> <shape> <offset> <len>` line per parameter array in
//! canonical order) terminated by `---`, followed by the raw little-endian
//! f32 payload. Loading validates every shape against the spec-derived
//! expectation before accepting any bytes, and round trips are bit-exact.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::cae::{build_cae, CaeModel, CaeSpec, OutputHead};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const MODEL_FORMAT: &str = "cae-model/1";

fn head_name(head: OutputHead) -> &'static str {
    match head {
        OutputHead::Softmax3 => "softmax3",
        OutputHead::Sigmoid => "sigmoid",
    }
}

fn head_from_name(name: &str) -> Option<OutputHead> {
    match name {
        "softmax3" => Some(OutputHead::Softmax3),
        "sigmoid" => Some(OutputHead::Sigmoid),
        _ => None,
    }
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn save_model(model: &CaeModel<f32>, path: &Path) -> Result<()> {
    let spec = model.spec();
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{MODEL_FORMAT}")?;
    writeln!(out, "input_dims = {},{},{}", spec.input_dims.0, spec.input_dims.1, spec.input_dims.2)?;
    writeln!(
        out,
        "encoder_conv_filters = {}",
        spec.encoder_conv_filters.map(|v| v.to_string()).join(",")
    )?;
    writeln!(
        out,
        "encoder_dense_units = {}",
        spec.encoder_dense_units.map(|v| v.to_string()).join(",")
    )?;
    writeln!(out, "embedding_dim = {}", spec.embedding_dim)?;
    writeln!(out, "output_head = {}", head_name(spec.output_head))?;
    writeln!(out, "use_attention = {}", spec.use_attention)?;
    writeln!(out, "attention_reduction = {}", spec.attention_reduction)?;
    writeln!(out, "attention_kernel = {}", spec.attention_kernel)?;
    writeln!(out, "kernel_size = {}", spec.kernel_size)?;
    let mut offset = 0usize;
    let named = model.named_params();
    for (name, shape, values) in &named {
        writeln!(out, "param {name} {} {offset} {}", shape_string(shape), values.len())?;
        offset += values.len() * 4;
    }
    writeln!(out, "---")?;
    for (_, _, values) in &named {
        for v in *values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Save any precision by casting parameters to f32 first.
pub fn save_model_any<T: Real>(model: &CaeModel<T>, path: &Path) -> Result<()> {
    save_model(&model.cast::<f32>(), path)
}

struct ParamLine {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

pub fn load_model(path: &Path) -> Result<CaeModel<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |detail: String| Error::CorruptManifest {
        path: path.to_path_buf(),
        detail,
    };
    let header_end = bytes
        .windows(4)
        .position(|w| w == b"---\n")
        .ok_or_else(|| corrupt("missing `---` terminator".into()))?;
    let manifest = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt("manifest is not UTF-8".into()))?;
    let payload = &bytes[header_end + 4..];

    let mut lines = manifest.lines();
    if lines.next() != Some(MODEL_FORMAT) {
        return Err(corrupt("unknown format line".into()));
    }
    let mut fields = std::collections::HashMap::new();
    let mut params: Vec<ParamLine> = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("param ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(corrupt(format!("bad param line `{line}`")));
            }
            let shape: Option<Vec<usize>> = parts[1].split('x').map(|s| s.parse().ok()).collect();
            let (offset, len) = (parts[2].parse().ok(), parts[3].parse().ok());
            match (shape, offset, len) {
                (Some(shape), Some(offset), Some(len)) => params.push(ParamLine {
                    name: parts[0].to_string(),
                    shape,
                    offset,
                    len,
                }),
                _ => return Err(corrupt(format!("bad param line `{line}`"))),
            }
        } else if let Some((k, v)) = line.split_once(" = ") {
            fields.insert(k.to_string(), v.to_string());
        }
    }

    let get = |k: &str| -> Result<&String> {
        fields.get(k).ok_or_else(|| Error::CorruptManifest {
            path: path.to_path_buf(),
            detail: format!("missing field `{k}`"),
        })
    };
    let parse_list = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| corrupt(format!("bad number `{p}`: {e}"))))
            .collect()
    };
    let input = parse_list(get("input_dims")?)?;
    if input.len() != 3 {
        return Err(corrupt("input_dims needs three values".into()));
    }
    let conv = parse_list(get("encoder_conv_filters")?)?;
    let dense = parse_list(get("encoder_dense_units")?)?;
    if conv.len() != 4 || dense.len() != 3 {
        return Err(corrupt("filter/unit lists have wrong lengths".into()));
    }
    let spec = CaeSpec {
        input_dims: (input[0], input[1], input[2]),
        encoder_conv_filters: [conv[0], conv[1], conv[2], conv[3]],
        encoder_dense_units: [dense[0], dense[1], dense[2]],
        embedding_dim: get("embedding_dim")?.parse().map_err(|_| corrupt("bad embedding_dim".into()))?,
        output_head: head_from_name(get("output_head")?).ok_or_else(|| corrupt("bad output_head".into()))?,
        use_attention: get("use_attention")?.parse().map_err(|_| corrupt("bad use_attention".into()))?,
        attention_reduction: get("attention_reduction")?.parse().map_err(|_| corrupt("bad attention_reduction".into()))?,
        attention_kernel: get("attention_kernel")?.parse().map_err(|_| corrupt("bad attention_kernel".into()))?,
        kernel_size: get("kernel_size")?.parse().map_err(|_| corrupt("bad kernel_size".into()))?,
    };
    spec.validate().map_err(|e| corrupt(format!("invalid spec: {e}")))?;

    let mut model: CaeModel<f32> = build_cae(&spec, 0)?;
    // validate the manifest against the freshly built architecture before
    // touching any payload bytes
    let expected: Vec<(String, Vec<usize>, usize)> = model
        .named_params()
        .into_iter()
        .map(|(name, shape, values)| (name, shape, values.len()))
        .collect();
    if expected.len() != params.len() {
        return Err(corrupt(format!(
            "manifest lists {} parameter arrays, architecture has {}",
            params.len(),
            expected.len()
        )));
    }
    for ((want_name, want_shape, want_len), line) in expected.iter().zip(&params) {
        if &line.name != want_name {
            return Err(corrupt(format!(
                "parameter order mismatch: manifest has `{}`, expected `{want_name}`",
                line.name
            )));
        }
        if &line.shape != want_shape || line.len != *want_len {
            return Err(Error::ManifestShape {
                name: line.name.clone(),
                expected: format!("{} ({} values)", shape_string(want_shape), want_len),
                found: format!("{} ({} values)", shape_string(&line.shape), line.len),
            });
        }
    }
    let total_bytes: u64 = params.iter().map(|p| p.len as u64 * 4).sum();
    if (payload.len() as u64) < total_bytes {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: total_bytes,
            found: payload.len() as u64,
        });
    }
    let mut arrays: Vec<Vec<f32>> = Vec::with_capacity(params.len());
    for line in &params {
        let start = line.offset;
        let end = start + line.len * 4;
        if end > payload.len() {
            return Err(Error::TruncatedPayload {
                path: path.to_path_buf(),
                expected: end as u64,
                found: payload.len() as u64,
            });
        }
        arrays.push(
            payload[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    for (dst, src) in model.params_mut().into_iter().zip(arrays) {
        *dst = src;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cae::{build_cae, CaeSpec, TrainConfig};
    use crate::tensor::ImageTensor;

    fn spec() -> CaeSpec {
        CaeSpec {
            input_dims: (16, 16, 3),
            encoder_conv_filters: [6, 5, 4, 8],
            encoder_dense_units: [8, 6, 4],
            embedding_dim: 3,
            use_attention: true,
            ..CaeSpec::default()
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut model: CaeModel<f32> = build_cae(&spec(), 42).unwrap();
        // a little training so parameters are not just the init
        let images = ImageTensor::from_fn(6, 16, 16, 3, |b, y, x, c| ((b + y + x + c) % 7) as f32 / 7.0);
        let config = TrainConfig { epochs: 1, batch_size: 3, ..TrainConfig::default() };
        crate::cae::train_cae(&mut model, &images, &config).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cae");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.spec(), model.spec());
        let a: Vec<u32> = model
            .named_params()
            .iter()
            .flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()))
            .collect();
        let b: Vec<u32> = loaded
            .named_params()
            .iter()
            .flat_map(|(_, _, v)| v.iter().map(|x| x.to_bits()))
            .collect();
        assert_eq!(a, b);
        // behavioral equality
        let batch = ImageTensor::from_fn(2, 16, 16, 3, |_, y, x, c| ((y * x + c) % 5) as f32 / 5.0);
        assert_eq!(model.encode(&batch).unwrap(), loaded.encode(&batch).unwrap());
    }

    #[test]
    fn truncated_payload_is_distinct_error() {
        let model: CaeModel<f32> = build_cae(&spec(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cae");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn edited_shape_is_shape_validation_error_naming_the_layer() {
        let model: CaeModel<f32> = build_cae(&spec(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cae");
        save_model(&model, &path).unwrap();
        let text = std::fs::read(&path).unwrap();
        let edited = String::from_utf8_lossy(&text).replace("param encoder.conv1.kernels 3x3x3x6", "param encoder.conv1.kernels 3x3x3x7");
        std::fs::write(&path, edited.as_bytes()).unwrap();
        match load_model(&path) {
            Err(Error::ManifestShape { name, .. }) => assert_eq!(name, "encoder.conv1.kernels"),
            other => panic!("expected ManifestShape, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_manifest_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cae");
        std::fs::write(&path, b"cae-model/999\n---\n").unwrap();
        assert!(matches!(load_model(&path), Err(Error::CorruptManifest { .. })));
    }
}
