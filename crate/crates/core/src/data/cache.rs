//! On-disk dataset cache: a line-oriented ASCII manifest (counts, dims,
//! seed, provenance, section lengths) terminated by `---`, followed by the
//! raw sections in order — little-endian f32 image tensor, label bytes,
//! category bytes, newline-joined ids. Round trips are bit-exact.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::data::catalog::Category;
use crate::data::subset::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const DATASET_FORMAT: &str = "galaxy-dataset/1";

/// A dataset plus the provenance recorded when it was built.
#[derive(Debug, Clone)]
pub struct DatasetCache {
    pub dataset: LabeledDataset,
    pub seed: u64,
    pub provenance: String,
}

pub fn save_dataset(cache: &DatasetCache, path: &Path) -> Result<()> {
    let ds = &cache.dataset;
    let (n, h, w, c) = ds.images.dims();
    let image_bytes: Vec<u8> = ds.images.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let label_bytes: Vec<u8> = ds.labels.iter().map(|&l| l as u8).collect();
    let category_bytes: Vec<u8> = ds
        .categories
        .iter()
        .map(|c| c.map_or(255, |cat| cat.index() as u8))
        .collect();
    let id_bytes = ds.ids.join("\n").into_bytes();
    let counts = ds.category_counts();

    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{DATASET_FORMAT}")?;
    writeln!(out, "samples = {n}")?;
    writeln!(out, "height = {h}")?;
    writeln!(out, "width = {w}")?;
    writeln!(out, "channels = {c}")?;
    writeln!(out, "outliers = {}", ds.outlier_count())?;
    writeln!(
        out,
        "category_counts = {}",
        counts.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    )?;
    writeln!(out, "seed = {}", cache.seed)?;
    writeln!(out, "provenance = {}", cache.provenance)?;
    writeln!(out, "section images {}", image_bytes.len())?;
    writeln!(out, "section labels {}", label_bytes.len())?;
    writeln!(out, "section categories {}", category_bytes.len())?;
    writeln!(out, "section ids {}", id_bytes.len())?;
    writeln!(out, "---")?;
    out.write_all(&image_bytes)?;
    out.write_all(&label_bytes)?;
    out.write_all(&category_bytes)?;
    out.write_all(&id_bytes)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetCache> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |detail: &str| Error::CorruptManifest {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let header_end = find_manifest_end(&bytes).ok_or_else(|| corrupt("missing `---` terminator"))?;
    let manifest = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| corrupt("manifest is not UTF-8"))?;
    let payload = &bytes[header_end + 4..]; // skip "---\n"

    let mut lines = manifest.lines();
    if lines.next() != Some(DATASET_FORMAT) {
        return Err(corrupt("unknown format line"));
    }
    let mut fields = std::collections::HashMap::new();
    let mut sections: Vec<(String, usize)> = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("section ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| corrupt("bad section line"))?;
            let len: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| corrupt("bad section length"))?;
            sections.push((name.to_string(), len));
        } else if let Some((k, v)) = line.split_once(" = ") {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get_usize = |k: &str| -> Result<usize> {
        fields
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt(&format!("missing or bad field `{k}`")))
    };
    let n = get_usize("samples")?;
    let h = get_usize("height")?;
    let w = get_usize("width")?;
    let c = get_usize("channels")?;
    let seed: u64 = fields
        .get("seed")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("missing or bad field `seed`"))?;
    let provenance = fields.get("provenance").cloned().unwrap_or_default();

    let expected: u64 = sections.iter().map(|(_, len)| *len as u64).sum();
    if (payload.len() as u64) < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len() as u64,
        });
    }
    let mut offset = 0usize;
    let mut take = |name: &str| -> Result<&[u8]> {
        let (sec_name, len) = sections
            .get({
                let pos = sections.iter().position(|(s, _)| s == name);
                pos.ok_or_else(|| corrupt(&format!("missing section `{name}`")))?
            })
            .cloned()
            .map(|(s, l)| (s, l))
            .ok_or_else(|| corrupt("section bookkeeping"))?;
        let _ = sec_name;
        let slice = &payload[offset..offset + len];
        offset += len;
        Ok(slice)
    };

    let image_bytes = take("images")?;
    if image_bytes.len() != n * h * w * c * 4 {
        return Err(corrupt(&format!(
            "images section holds {} bytes, dims need {}",
            image_bytes.len(),
            n * h * w * c * 4
        )));
    }
    let data: Vec<f32> = image_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let images = ImageTensor::new(n, h, w, c, data)?;

    let labels: Vec<bool> = take("labels")?.iter().map(|&b| b != 0).collect();
    let categories: Vec<Option<Category>> = take("categories")?
        .iter()
        .map(|&b| {
            if b == 255 {
                Ok(None)
            } else {
                Category::from_index(b as usize).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let id_blob = String::from_utf8(take("ids")?.to_vec()).map_err(|_| corrupt("ids are not UTF-8"))?;
    let ids: Vec<String> = if id_blob.is_empty() {
        Vec::new()
    } else {
        id_blob.split('\n').map(str::to_owned).collect()
    };

    Ok(DatasetCache {
        dataset: LabeledDataset::new(images, labels, categories, ids)?,
        seed,
        provenance,
    })
}

fn find_manifest_end(bytes: &[u8]) -> Option<usize> {
    bytes.windows(4).position(|w| w == b"---\n").map(|p| {
        // the terminator line starts right after the preceding newline
        p
    })
}
