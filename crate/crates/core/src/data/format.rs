//! Dataset file: a single little-endian binary container.
//!
//! ```text
//! magic    4 bytes "LTDS"
//! version  u8      1
//! K        u32     class count
//! count    u32     number of samples
//! H, W     u32     image height and width
//! per sample: id u32, label i32 (-1 = hidden), H*W f32 pixels (row-major)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{Dataset, ImageSample};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LTDS";
pub const VERSION: u8 = 1;

pub fn write_dataset(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    ds.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for v in [ds.classes, ds.samples.len(), ds.height, ds.width] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for s in &ds.samples {
        w.write_all(&s.id.to_le_bytes())?;
        let label = s.label.map_or(-1i32, |l| l as i32);
        w.write_all(&label.to_le_bytes())?;
        for p in &s.pixels {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data("not a dataset file (bad magic)"));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(Error::data(format!("unsupported dataset version {}", version[0])));
    }
    let mut header = [0u32; 4];
    for h in &mut header {
        *h = read_u32(r)?;
    }
    let [classes, count, height, width] = header.map(|v| v as usize);
    let pixels = height * width;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; pixels * 4];
    for _ in 0..count {
        let id = read_u32(r)?;
        let raw_label = read_u32(r)? as i32;
        let label = match raw_label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(Error::data(format!("sample {id}: invalid label {l}"))),
        };
        r.read_exact(&mut buf)?;
        let pixels = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        samples.push(ImageSample { id, pixels, label });
    }
    let ds = Dataset { classes, height, width, samples };
    ds.validate()?;
    Ok(ds)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    read_dataset(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Io(io) => Error::data(format!("{}: {io}", path.display())),
        other => other,
    })
}
