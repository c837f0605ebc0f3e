//! Raw little-endian shard files.
//!
//! Header: `u32` count, `u32` channels, height, width, `u32` class count.
//! Then `count` records of a `u32` label followed by `C·H·W` `f32` pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::RawDataset;
use crate::error::{Error, Result};

pub fn write_shard(path: &Path, data: &RawDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit a shard header")))
    };
    for (v, what) in [
        (data.len(), "count"),
        (data.channels, "channels"),
        (data.height, "height"),
        (data.width, "width"),
        (data.n_classes, "classes"),
    ] {
        w.write_all(&dim(v, what)?.to_le_bytes())?;
    }
    for i in 0..data.len() {
        w.write_all(&dim(data.labels[i], "label")?.to_le_bytes())?;
        for p in data.image(i) {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_shard(path: &Path) -> Result<RawDataset> {
    let name = path.display();
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Data(format!("{name}: {e}")))?,
    );
    let mut header = [0usize; 5];
    for h in header.iter_mut() {
        *h = read_u32(&mut r).map_err(|e| Error::Data(format!("{name}: truncated header: {e}")))? as usize;
    }
    let [count, channels, height, width, n_classes] = header;
    let n = channels * height * width;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * n);
    let mut buf = vec![0u8; 4 * n];
    for i in 0..count {
        let truncated = |e: std::io::Error| Error::Data(format!("{name}: record {i} truncated: {e}"));
        let label = read_u32(&mut r).map_err(truncated)? as usize;
        if label >= n_classes {
            return Err(Error::Data(format!("{name}: record {i} has label {label} outside 0..{n_classes}")));
        }
        r.read_exact(&mut buf).map_err(truncated)?;
        labels.push(label);
        pixels.extend(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Data(format!("{name}: trailing bytes after {count} records")));
    }
    Ok(RawDataset {
        channels,
        height,
        width,
        n_classes,
        labels,
        pixels,
    })
}

/// Concatenates every `*.shard` file of `dir` in file-name order.
pub fn read_shard_dir(dir: &Path) -> Result<RawDataset> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "shard") {
            paths.push(p);
        }
    }
    paths.sort();
    let Some(first) = paths.first() else {
        return Err(Error::Data(format!("{}: no .shard files", dir.display())));
    };
    let mut all = read_shard(first)?;
    for p in &paths[1..] {
        let next = read_shard(p)?;
        let a = (all.channels, all.height, all.width);
        let b = (next.channels, next.height, next.width);
        if a != b {
            return Err(Error::Data(format!(
                "{}: images are {b:?} but earlier shards hold {a:?}",
                p.display()
            )));
        }
        all.n_classes = all.n_classes.max(next.n_classes);
        all.labels.extend(next.labels);
        all.pixels.extend(next.pixels);
    }
    Ok(all)
}
