//! Measured ODMR peak positions.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PEAK_CSV_HEADER: [&str; 4] = ["B_mT", "freq_MHz", "weight", "region_id"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub b_mt: f64,
    /// MHz.
    pub frequency: f64,
    pub weight: f64,
    /// Measurement region sharing one field offset.
    pub region_id: u32,
}

impl Peak {
    pub fn new(b_mt: f64, frequency: f64) -> Self {
        Peak {
            b_mt,
            frequency,
            weight: 1.0,
            region_id: 0,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.b_mt.is_finite() {
            return Err(format!("field {} is not finite", self.b_mt));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(format!("frequency {} must be positive", self.frequency));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(format!("weight {} must be >= 0", self.weight));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeakList {
    peaks: Vec<Peak>,
}

impl PeakList {
    pub fn new(peaks: Vec<Peak>) -> Result<Self> {
        for (k, p) in peaks.iter().enumerate() {
            p.validate().map_err(|msg| Error::InvalidParameter(format!("peak {k}: {msg}")))?;
        }
        Ok(PeakList { peaks })
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// Distinct region ids in ascending order.
    pub fn regions(&self) -> Vec<u32> {
        let mut r: Vec<u32> = self.peaks.iter().map(|p| p.region_id).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    /// Parses `B_mT,freq_MHz,weight,region_id`; `origin` names the source
    /// in error messages.
    pub fn from_reader<R: Read>(reader: R, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != PEAK_CSV_HEADER {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                msg: format!("expected header {}", PEAK_CSV_HEADER.join(",")),
            });
        }
        let mut peaks = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line,
                msg,
            };
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|_| err(format!("{} = {:?} is not a number", PEAK_CSV_HEADER[k], &rec[k])))
            };
            let peak = Peak {
                b_mt: num(0)?,
                frequency: num(1)?,
                weight: num(2)?,
                region_id: rec[3]
                    .parse()
                    .map_err(|_| err(format!("region_id = {:?} is not a small integer", &rec[3])))?,
            };
            peak.validate().map_err(err)?;
            peaks.push(peak);
        }
        Ok(PeakList { peaks })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(PEAK_CSV_HEADER)?;
        for p in &self.peaks {
            wr.write_record([
                p.b_mt.to_string(),
                p.frequency.to_string(),
                p.weight.to_string(),
                p.region_id.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
