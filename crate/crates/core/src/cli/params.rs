//! Index parameters as a two-column `key,value` CSV file.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::indices::ViParams;

const KEYS: [&str; 5] = ["gamma", "savi_l", "clip_eps", "ndvi_min", "ndvi_max"];

pub fn write_params<W: Write>(params: &ViParams, out: W) -> Result<()> {
    params.validate()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key", "value"])?;
    w.write_record(["gamma", &params.gamma.to_string()])?;
    w.write_record(["savi_l", &params.savi_l.to_string()])?;
    w.write_record(["clip_eps", &params.clip_eps.to_string()])?;
    if let Some((lo, hi)) = params.ndvi_range {
        w.write_record(["ndvi_min", &lo.to_string()])?;
        w.write_record(["ndvi_max", &hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_params`]. Missing keys keep their defaults;
/// unknown or repeated keys are rejected.
pub fn read_params<R: Read>(input: R) -> Result<ViParams> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["key", "value"] {
        return Err(Error::ParamFormat(format!(
            "expected header key,value, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut seen = [None::<f64>; 5];
    for record in r.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::ParamFormat(format!(
                "line {}: expected 2 fields",
                record.position().map_or(0, |p| p.line())
            )));
        }
        let key = record[0].trim();
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::ParamFormat(format!("unknown key {key:?}")))?;
        if seen[slot].is_some() {
            return Err(Error::ParamFormat(format!("key {key:?} given twice")));
        }
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::ParamFormat(format!("{key}: {:?} is not a number", &record[1])))?;
        seen[slot] = Some(value);
    }
    let mut params = ViParams::default();
    if let Some(v) = seen[0] {
        params.gamma = v;
    }
    if let Some(v) = seen[1] {
        params.savi_l = v;
    }
    if let Some(v) = seen[2] {
        params.clip_eps = v;
    }
    params.ndvi_range = match (seen[3], seen[4]) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => {
            return Err(Error::ParamFormat(
                "ndvi_min and ndvi_max must appear together".into(),
            ))
        }
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = ViParams {
            gamma: 0.8,
            savi_l: 1.0,
            clip_eps: 1e-7,
            ndvi_range: Some((-0.25, 0.875)),
        };
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        assert_eq!(read_params(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let p = read_params("key,value\ngamma,1.0\n".as_bytes()).unwrap();
        assert_eq!(p.gamma, 1.0);
        assert_eq!(p.savi_l, ViParams::default().savi_l);
        assert_eq!(p.ndvi_range, None);
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            "k,v\ngamma,1\n",
            "key,value\ngamma,1\ngamma,1\n",
            "key,value\nbeta,1\n",
            "key,value\ngamma,abc\n",
            "key,value\nndvi_min,0\n",
        ] {
            assert!(
                matches!(read_params(text.as_bytes()), Err(Error::ParamFormat(_))),
                "{text}"
            );
        }
        assert!(matches!(
            read_params("key,value\ngamma,2\n".as_bytes()),
            Err(Error::InvalidParameter(_))
        ));
    }
}
