//! Line-delimited person records shared by annotation and prediction files:
//! `image_id x y w h score` followed by one `x y v` triple per keypoint.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::Keypoint;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub image_id: u64,
    /// Person box `(x, y, w, h)` in image pixels.
    pub bbox: [f64; 4],
    pub score: f64,
    pub keypoints: Vec<Keypoint>,
}

impl Record {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {} {}",
            self.image_id, self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3], self.score
        );
        for k in &self.keypoints {
            let _ = write!(s, " {} {} {}", k.x, k.y, k.v);
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 6 || !(f.len() - 6).is_multiple_of(3) {
            return Err(Error::Data(format!("expected 6 + 3k fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("field {} `{}` is not a finite number", i + 1, f[i])))
        };
        let image_id = f[0].parse().map_err(|_| Error::Data(format!("bad image id `{}`", f[0])))?;
        let bbox = [num(1)?, num(2)?, num(3)?, num(4)?];
        let score = num(5)?;
        let mut keypoints = Vec::with_capacity((f.len() - 6) / 3);
        for i in (6..f.len()).step_by(3) {
            let v: u8 = f[i + 2]
                .parse()
                .ok()
                .filter(|v| *v <= 2)
                .ok_or_else(|| Error::Data(format!("visibility `{}` is not 0, 1 or 2", f[i + 2])))?;
            keypoints.push(Keypoint::new(num(i)?, num(i + 1)?, v));
        }
        Ok(Record {
            image_id,
            bbox,
            score,
            keypoints,
        })
    }
}

pub fn format_records(records: &[Record]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

/// Parses a record file; blank lines and `#` comments are skipped.
pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(no, l)| Record::parse_line(l).map_err(|e| Error::Data(format!("line {}: {e}", no + 1))))
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, format_records(records)).map_err(|e| Error::io(path, e))
}
