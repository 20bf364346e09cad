//! File output: atomic writes, raster CSV and 16-bit PNG export.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::indices::{meaningful_range, ViRaster};

/// Writes through a temporary file in the destination directory, then renames
/// it over `path`.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

/// One CSV row per raster row; invalid pixels are empty cells.
pub fn write_raster_csv(raster: &ViRaster, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for row in 0..raster.height {
        let cells = (0..raster.width).map(|x| {
            let i = row * raster.width + x;
            if raster.valid[i] {
                raster.values[i].to_string()
            } else {
                String::new()
            }
        });
        w.write_record(cells)?;
    }
    w.flush()?;
    Ok(())
}

/// Affine map used for 16-bit export: `value = lo + (hi - lo) * code / 65535`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoding {
    pub lo: f64,
    pub hi: f64,
    pub lo_observed: bool,
    pub hi_observed: bool,
}

impl Encoding {
    /// Uses the index's meaningful range, falling back to the observed
    /// extreme on any unbounded side.
    pub fn for_raster(raster: &ViRaster) -> Result<Self> {
        let range = meaningful_range(raster.kind);
        let (mut lo_obs, mut hi_obs) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in raster.valid_values() {
            lo_obs = lo_obs.min(v);
            hi_obs = hi_obs.max(v);
        }
        let observed = lo_obs <= hi_obs;
        let pick = |bound: Option<f64>, fallback: f64| match bound {
            Some(b) => Ok((b, false)),
            None if observed => Ok((fallback, true)),
            None => Err(Error::Empty(format!(
                "{} raster has no valid pixels to bound its range",
                raster.kind
            ))),
        };
        let (lo, lo_observed) = pick(range.finite_lo(), lo_obs)?;
        let (hi, hi_observed) = pick(range.finite_hi(), hi_obs)?;
        Ok(Self {
            lo,
            hi,
            lo_observed,
            hi_observed,
        })
    }

    pub fn encode(&self, v: f64) -> u16 {
        if self.hi <= self.lo {
            return 0;
        }
        let t = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        (t * 65535.0).round() as u16
    }

    pub fn decode(&self, code: u16) -> f64 {
        self.lo + (self.hi - self.lo) * f64::from(code) / 65535.0
    }

    fn sidecar(&self, raster: &ViRaster) -> String {
        let source = |observed: bool| if observed { "observed" } else { "meaningful" };
        format!(
            "kind={}\nlo={}\nhi={}\nlo_source={}\nhi_source={}\n\
             mapping=value = lo + (hi - lo) * code / 65535\n\
             clamped=values outside [lo, hi] are clamped\ninvalid_code=0\n",
            raster.kind.name(),
            self.lo,
            self.hi,
            source(self.lo_observed),
            source(self.hi_observed),
        )
    }
}

/// Writes `<stem>.png` (16-bit grayscale) and `<stem>.range.txt`.
pub fn write_raster_png16(raster: &ViRaster, dir: &Path, stem: &str) -> Result<()> {
    let enc = Encoding::for_raster(raster)?;
    let codes: Vec<u16> = raster
        .values
        .iter()
        .zip(&raster.valid)
        .map(|(&v, &ok)| if ok { enc.encode(v) } else { 0 })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(raster.width as u32, raster.height as u32, codes)
            .ok_or_else(|| Error::Dimension("raster size does not match its pixels".into()))?;
    let png = dir.join(format!("{stem}.png"));
    write_atomic(&png, |w| {
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: png.clone(),
                source,
            })?;
        w.write_all(bytes.get_ref())?;
        Ok(())
    })?;
    write_atomic(&dir.join(format!("{stem}.range.txt")), |w| {
        w.write_all(enc.sidecar(raster).as_bytes())?;
        Ok(())
    })
}
