//! The `PDYTRAJ1` trajectory file: a text header of `key=value` lines ended by
//! a blank line, then little-endian f64 values (frame, channel, row-major).

use std::fs;
use std::path::Path;

use super::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridSpec};

pub const TRAJECTORY_MAGIC: &str = "PDYTRAJ1";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn save_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    let mut bytes = format!(
        "{TRAJECTORY_MAGIC}\ndims={}\nextent={}\nbc={}\nchannels={}\ndt={}\nframes={}\n\n",
        join(&t.spec.dims),
        join(&t.spec.extent),
        t.spec.bc,
        t.channels,
        t.dt,
        t.frames.len()
    )
    .into_bytes();
    bytes.reserve(t.frames.len() * t.state_dim() * 8);
    for v in t.frames.iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |pos: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("byte {pos}: {reason}"),
    };
    if bytes.is_empty() {
        return Err(fail(0, format!("empty file, expected magic `{TRAJECTORY_MAGIC}`")));
    }
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| fail(bytes.len(), "header is not terminated by a blank line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| fail(e.valid_up_to(), "header is not valid UTF-8".into()))?;

    let mut lines = header.split('\n');
    let magic = lines.next().unwrap_or_default();
    if magic != TRAJECTORY_MAGIC {
        return Err(fail(0, format!("bad magic `{magic}`, expected `{TRAJECTORY_MAGIC}`")));
    }
    let mut pos = magic.len() + 1;
    let (mut dims, mut extent, mut bc, mut channels, mut dt, mut frames) = (None, None, None, None, None, None);
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(pos, format!("expected key=value, got `{line}`")))?;
        let bad = |what: &str| fail(pos, format!("invalid {what} `{value}`"));
        match key {
            "dims" => {
                dims = Some(
                    value
                        .split(',')
                        .map(str::parse::<usize>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("dims"))?,
                )
            }
            "extent" => {
                extent = Some(
                    value
                        .split(',')
                        .map(str::parse::<f64>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("extent"))?,
                )
            }
            "bc" => bc = Some(value.parse::<BoundaryCondition>().map_err(|_| bad("bc"))?),
            "channels" => channels = Some(value.parse::<usize>().map_err(|_| bad("channels"))?),
            "dt" => dt = Some(value.parse::<f64>().map_err(|_| bad("dt"))?),
            "frames" => frames = Some(value.parse::<usize>().map_err(|_| bad("frames"))?),
            other => return Err(fail(pos, format!("unknown header key `{other}`"))),
        }
        pos += line.len() + 1;
    }
    let missing = |k: &str| fail(header_end, format!("header is missing `{k}`"));
    let spec = GridSpec::new(
        dims.ok_or_else(|| missing("dims"))?,
        extent.ok_or_else(|| missing("extent"))?,
        bc.ok_or_else(|| missing("bc"))?,
    )
    .map_err(|e| fail(0, e.to_string()))?;
    let channels = channels.ok_or_else(|| missing("channels"))?;
    let dt = dt.ok_or_else(|| missing("dt"))?;
    let n_frames = frames.ok_or_else(|| missing("frames"))?;

    let payload = &bytes[header_end + 2..];
    let d = channels * spec.len();
    let expected = n_frames * d * 8;
    if payload.len() != expected {
        return Err(fail(
            header_end + 2 + payload.len().min(expected),
            format!(
                "payload has {} bytes but the header declares {n_frames} frames of {d} values ({expected} bytes)",
                payload.len()
            ),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(fail(header_end + 2 + 8 * k, "non-finite value in payload".into()));
    }
    let frames = if d == 0 {
        Vec::new()
    } else {
        values.chunks(d).map(<[f64]>::to_vec).collect()
    };
    Trajectory::new(spec, channels, dt, frames).map_err(|e| fail(header_end + 2, e.to_string()))
}
