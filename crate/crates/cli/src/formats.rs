//! On-disk formats.
//!
//! * Feature maps: `FMAP`, one version byte, `C`, `H`, `W` as little-endian
//!   `u32`, then `C·H·W` little-endian `f32` values, channel-major and
//!   row-major within a channel.
//! * Labels: CSV with header `subject_id,time_days,event`, event as 0/1.
//! * Boxes, proposals, models and reports: pretty-printed JSON.
//! * Heatmaps: binary PGM (`P5`, maxval 255).

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use survcam_core::region::{select_regions, ProposalSet, RegionNames, RegionSet};
use survcam_core::survival::{FeatureMap, SurvivalRecord};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u8 = 1;
const FMAP_HEADER: usize = 4 + 1 + 12;

pub fn encode_fmap(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAP_HEADER + 4 * fm.values().len());
    out.extend_from_slice(FMAP_MAGIC);
    out.push(FMAP_VERSION);
    for d in [fm.channels(), fm.height(), fm.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in fm.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    ensure!(
        bytes.len() >= FMAP_HEADER,
        "feature map truncated ({} bytes)",
        bytes.len()
    );
    ensure!(&bytes[..4] == FMAP_MAGIC, "not a feature map (bad magic)");
    ensure!(
        bytes[4] == FMAP_VERSION,
        "unsupported feature map version {}",
        bytes[4]
    );
    let dim = |k: usize| {
        let at = 5 + 4 * k;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .context("feature map dimensions overflow")?;
    let body = &bytes[FMAP_HEADER..];
    ensure!(
        body.len() == 4 * n,
        "feature map {c}x{h}x{w} needs {} value bytes, found {}",
        4 * n,
        body.len()
    );
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(FeatureMap::new(c, h, w, values)?)
}

pub fn write_fmap(path: &Path, fm: &FeatureMap) -> Result<()> {
    fs::write(path, encode_fmap(fm)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_fmap(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_fmap(&bytes).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    subject_id: String,
    time_days: f64,
    event: u8,
}

pub fn write_labels(path: &Path, records: &[SurvivalRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in records {
        w.serialize(LabelRow {
            subject_id: r.subject_id.clone(),
            time_days: r.time_days,
            event: u8::from(r.event),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<SurvivalRecord>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    ensure!(
        headers.iter().collect::<Vec<_>>() == ["subject_id", "time_days", "event"],
        "{}: header must be subject_id,time_days,event",
        path.display()
    );
    let mut records = Vec::new();
    for (line, row) in reader.deserialize::<LabelRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 1))?;
        let event = match row.event {
            0 => false,
            1 => true,
            e => bail!(
                "{}: row {}: event must be 0 or 1, got {e}",
                path.display(),
                line + 1
            ),
        };
        records.push(
            SurvivalRecord::new(row.subject_id, row.time_days, event)
                .with_context(|| format!("{}: row {}", path.display(), line + 1))?,
        );
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("{}: duplicate subject {}", path.display(), w[0]);
    }
    Ok(records)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A per-subject boxes file holds either resolved regions or raw detector
/// proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxesFile {
    Regions(RegionSet),
    Proposals(ProposalSet),
}

impl BoxesFile {
    /// Region set in name order; proposals go through region selection.
    pub fn into_regions(self, names: &RegionNames) -> Result<RegionSet> {
        match self {
            BoxesFile::Regions(rs) => {
                rs.validate(names)?;
                Ok(rs)
            }
            BoxesFile::Proposals(ps) => Ok(select_regions(&ps, names)?),
        }
    }
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses the binary PGM files written by [`encode_pgm`]; comments are not
/// supported.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        ensure!(start < pos, "pgm header truncated");
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    ensure!(fields[0] == "P5", "not a binary pgm");
    ensure!(fields[3] == "255", "pgm maxval must be 255");
    let width: usize = fields[1].parse()?;
    let height: usize = fields[2].parse()?;
    let body = &bytes[pos + 1..];
    ensure!(body.len() == width * height, "pgm body has wrong length");
    Ok((width, height, body.to_vec()))
}

/// Writes a row-major grid as CSV, one map row per line.
pub fn write_grid_csv(path: &Path, width: usize, values: &[f64]) -> Result<()> {
    let mut text = String::new();
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|v| v.parse::<f64>().map_err(Into::into))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmap_layout() {
        let fm = FeatureMap::new(1, 1, 2, vec![1.0, -0.5]).unwrap();
        let bytes = encode_fmap(&fm);
        assert_eq!(&bytes[..5], b"FMAP\x01");
        assert_eq!(&bytes[5..17], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[17..21], &1.0f32.to_le_bytes());
        assert_eq!(decode_fmap(&bytes).unwrap(), fm);
    }

    #[test]
    fn fmap_rejects_bad_input() {
        let fm = FeatureMap::new(2, 2, 2, vec![0.5; 8]).unwrap();
        let bytes = encode_fmap(&fm);
        assert!(decode_fmap(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_fmap(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_fmap(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(decode_fmap(&bad).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let px = vec![0, 17, 255, 128, 3, 9];
        let bytes = encode_pgm(3, 2, &px);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), (3, 2, px));
    }

    #[test]
    fn boxes_file_variants() {
        let ps: BoxesFile = serde_json::from_str(r#"{"proposals": []}"#).unwrap();
        assert_eq!(ps, BoxesFile::Proposals(ProposalSet::default()));
        let rs: BoxesFile = serde_json::from_str(r#"{"boxes": []}"#).unwrap();
        assert!(matches!(rs, BoxesFile::Regions(_)));
    }
}
