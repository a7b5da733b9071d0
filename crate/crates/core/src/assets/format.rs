//! `.gsa` asset files.
//!
//! ```text
//! magic        4 bytes   "GSA1"
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 JSON:
//!              {"format_version":1,"num_gaussians":N,"sh_degree":D,"skeleton":{...}}
//! gaussians    N records of f32 LE:
//!              position[3] rotation[4] (w,x,y,z) scale[3] opacity features[3*(D+1)^2]
//! skinning     N rows: count u32 LE, then count x (joint u32 LE, weight f32 LE)
//! ```
//!
//! The file must end exactly after the last skinning row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sh_coeffs_per_channel, sparsify_weights, AssetError, Gaussian, GaussianAsset, Skeleton, SkinRow};

pub const GSA_MAGIC: &[u8; 4] = b"GSA1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    num_gaussians: usize,
    sh_degree: u8,
    skeleton: Skeleton,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AssetError + '_ {
    move |source| AssetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_asset(path: impl AsRef<Path>) -> Result<GaussianAsset, AssetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_asset(BufReader::new(file))
}

pub fn save_asset(asset: &GaussianAsset, path: impl AsRef<Path>) -> Result<(), AssetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_asset(asset, &mut w).and_then(|()| w.flush().map_err(io_err(path)))
}

pub fn write_asset(asset: &GaussianAsset, mut w: impl Write) -> Result<(), AssetError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        num_gaussians: asset.gaussians.len(),
        sh_degree: asset.sh_degree,
        skeleton: asset.skeleton.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| AssetError::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(8 + json.len() + asset.gaussians.len() * 64);
    buf.extend_from_slice(GSA_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for g in &asset.gaussians {
        for v in g
            .position
            .iter()
            .chain(&g.rotation)
            .chain(&g.scale)
            .chain(std::iter::once(&g.opacity))
            .chain(&g.features)
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for row in &asset.skinning {
        buf.extend_from_slice(&(row.len() as u32).to_le_bytes());
        for &(j, wgt) in row {
            buf.extend_from_slice(&j.to_le_bytes());
            buf.extend_from_slice(&wgt.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| AssetError::Format(format!("write failed: {e}")))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], AssetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| AssetError::Format(format!("truncated file while reading {what}")))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, AssetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, AssetError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s<const N: usize>(&mut self, what: &str) -> Result<[f32; N], AssetError> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f32(what)?;
        }
        Ok(out)
    }
}

pub fn read_asset(mut r: impl Read) -> Result<GaussianAsset, AssetError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)
        .map_err(|e| AssetError::Format(format!("read failed: {e}")))?;
    let mut cur = Cursor { data: &data, pos: 0 };

    if cur.take(4, "magic")? != GSA_MAGIC {
        return Err(AssetError::Format("bad magic, not a .gsa file".into()));
    }
    let header_len = cur.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len, "header")?)
        .map_err(|e| AssetError::Format(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(AssetError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.sh_degree > super::MAX_SH_DEGREE {
        return Err(AssetError::ShDegree(header.sh_degree));
    }
    header.skeleton.validate()?;
    let n = header.num_gaussians;
    let n_features = 3 * sh_coeffs_per_channel(header.sh_degree);
    let record = 4 * (11 + n_features);
    if n.checked_mul(record).is_none_or(|b| b > data.len()) {
        return Err(AssetError::Format(format!(
            "header declares {n} gaussians but the file is too small"
        )));
    }

    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let position = cur.f32s::<3>("position")?;
        let rotation = cur.f32s::<4>("rotation")?;
        let scale = cur.f32s::<3>("scale")?;
        let opacity = cur.f32("opacity")?;
        let features = (0..n_features)
            .map(|_| cur.f32("features"))
            .collect::<Result<Vec<_>, _>>()?;
        gaussians.push(Gaussian {
            position,
            rotation,
            scale,
            opacity,
            features,
        });
    }

    let joints = header.skeleton.len();
    let mut skinning = Vec::with_capacity(n);
    let mut truncated_rows = 0usize;
    for index in 0..n {
        let count = cur.u32("skinning count")? as usize;
        if count > joints {
            return Err(AssetError::Format(format!(
                "gaussian {index}: {count} skinning pairs for {joints} joints"
            )));
        }
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            pairs.push((cur.u32("skinning joint")?, cur.f32("skinning weight")?));
        }
        if count <= super::MAX_INFLUENCES {
            skinning.push(pairs.into_iter().collect::<SkinRow>());
        } else {
            if let Some(bad) = pairs.iter().find(|p| !p.1.is_finite()) {
                return Err(AssetError::Gaussian {
                    index,
                    problem: super::GaussianProblem::WeightOutOfRange(bad.1),
                });
            }
            let (row, dropped) = sparsify_weights(&pairs);
            truncated_rows += usize::from(dropped);
            skinning.push(row);
        }
    }
    if cur.pos != data.len() {
        return Err(AssetError::Format(format!(
            "{} trailing bytes after skinning block",
            data.len() - cur.pos
        )));
    }
    if truncated_rows > 0 {
        log::warn!(
            "{truncated_rows} skinning rows had more than {} influences; kept the largest and renormalized",
            super::MAX_INFLUENCES
        );
    }
    GaussianAsset::new(header.sh_degree, gaussians, skinning, header.skeleton)
}
