//! File formats: POVM and dilation JSON, confusion-matrix JSON, and the
//! shot-record CSV.
//!
//! A shot-record CSV starts with one `# ` line carrying the JSON header
//! (seed, length, POVM parameters, θ, noise, systematic model), then an
//! `outcome` column header and one outcome index per row.

use std::io::{BufRead, Write};

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::naimark::DilationUnitary;
use crate::noisekit::{ConfusionMatrix, ReadoutNoiseSpec, ShotRecord, SystematicModel};
use crate::povm::{QubitPovm, StPovmParams};
use crate::qstate::{BlochVector, C64};

/// `[re, im]`.
pub type ComplexPair = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmJson {
    pub labels: [String; 4],
    /// Four 2×2 row-major matrices of `[re, im]` pairs.
    pub elements: [[[ComplexPair; 2]; 2]; 4],
}

impl From<&QubitPovm> for PovmJson {
    fn from(p: &QubitPovm) -> Self {
        PovmJson {
            labels: p.labels().clone(),
            elements: p
                .elements()
                .map(|m| std::array::from_fn(|i| std::array::from_fn(|j| [m[(i, j)].re, m[(i, j)].im]))),
        }
    }
}

impl TryFrom<PovmJson> for QubitPovm {
    type Error = Error;
    fn try_from(j: PovmJson) -> Result<Self> {
        let elements = j
            .elements
            .map(|m| Matrix2::from_fn(|r, c| C64::new(m[r][c][0], m[r][c][1])));
        QubitPovm::new(elements, j.labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilationJson {
    pub basis: String,
    /// 4×4 row-major `[re, im]` entries of U₂.
    pub u2: [[ComplexPair; 4]; 4],
    pub unitarity_error: f64,
}

impl From<&DilationUnitary> for DilationJson {
    fn from(d: &DilationUnitary) -> Self {
        let u = d.unitary();
        DilationJson {
            basis: "index = 2*probe + ancilla; ancilla starts in |0>".into(),
            u2: std::array::from_fn(|i| std::array::from_fn(|j| [u[(i, j)].re, u[(i, j)].im])),
            unitarity_error: d.unitarity_error(),
        }
    }
}

impl DilationJson {
    pub fn matrix(&self) -> Matrix4<C64> {
        Matrix4::from_fn(|i, j| C64::new(self.u2[i][j][0], self.u2[i][j][1]))
    }
}

pub fn confusion_to_json(m: &ConfusionMatrix) -> Result<String> {
    Ok(serde_json::to_string_pretty(&m.rows())?)
}

pub fn confusion_from_json(s: &str) -> Result<ConfusionMatrix> {
    let rows: [[f64; 4]; 4] = serde_json::from_str(s)?;
    ConfusionMatrix::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader {
    seed: u64,
    n: usize,
    povm_params: StPovmParams,
    true_theta: BlochVector,
    noise: Option<ReadoutNoiseSpec>,
    #[serde(default)]
    systematic: SystematicModel,
}

pub fn write_shot_record<W: Write>(rec: &ShotRecord, mut w: W) -> Result<()> {
    let header = RecordHeader {
        seed: rec.seed,
        n: rec.outcomes.len(),
        povm_params: rec.povm_params,
        true_theta: rec.true_theta,
        noise: rec.noise,
        systematic: rec.systematic,
    };
    writeln!(w, "# {}", serde_json::to_string(&header)?)?;
    writeln!(w, "outcome")?;
    let mut buf = String::with_capacity(2 * rec.outcomes.len());
    for &o in &rec.outcomes {
        buf.push((b'0' + o) as char);
        buf.push('\n');
    }
    w.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_shot_record<R: BufRead>(r: R) -> Result<ShotRecord> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("empty shot record".into()))??;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Format("missing '# {json}' header line".into()))?;
    let header: RecordHeader = serde_json::from_str(json)?;
    let col = lines
        .next()
        .ok_or_else(|| Error::Format("missing column header".into()))??;
    if col.trim() != "outcome" {
        return Err(Error::Format(format!("unexpected column header {col:?}")));
    }
    let mut outcomes = Vec::with_capacity(header.n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        match t.parse::<u8>() {
            Ok(v) if v < 4 => outcomes.push(v),
            _ => return Err(Error::Format(format!("row {}: bad outcome {t:?}", i + 1))),
        }
    }
    if outcomes.len() != header.n {
        return Err(Error::Format(format!(
            "header declares {} shots, found {}",
            header.n,
            outcomes.len()
        )));
    }
    header.true_theta.check_physical()?;
    Ok(ShotRecord {
        outcomes,
        seed: header.seed,
        noise: header.noise,
        systematic: header.systematic,
        povm_params: header.povm_params,
        true_theta: header.true_theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naimark::dilate;
    use crate::noisekit::{build_confusion_matrix, sample_shots};
    use crate::povm::build_st_povm;

    #[test]
    fn shot_record_round_trip() {
        let params = StPovmParams::new(0.3, 0.2, BlochVector::new(0.0, 1.0, 1.0)).unwrap();
        let noise = Some(ReadoutNoiseSpec::new(0.01, 0.02, 0.03, 0.04).unwrap());
        let rec = sample_shots(&params, BlochVector::new(0.1, 0.2, 0.3), 1000, 3, noise).unwrap();
        let mut buf = Vec::new();
        write_shot_record(&rec, &mut buf).unwrap();
        let back = read_shot_record(buf.as_slice()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn shot_record_rejects_corruption() {
        let rec = sample_shots(&StPovmParams::aligned(0.0).unwrap(), BlochVector::ZERO, 10, 1, None).unwrap();
        let mut buf = Vec::new();
        write_shot_record(&rec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(read_shot_record(text.replacen("outcome", "x", 1).as_bytes()).is_err());
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(read_shot_record(truncated.as_bytes()).is_err());
        assert!(read_shot_record(format!("{text}7\n").as_bytes()).is_err());
    }

    #[test]
    fn povm_and_dilation_json() {
        let povm = build_st_povm(&StPovmParams::aligned(0.6).unwrap()).unwrap();
        let j = serde_json::to_string(&PovmJson::from(&povm)).unwrap();
        let back: QubitPovm = serde_json::from_str::<PovmJson>(&j).unwrap().try_into().unwrap();
        assert_eq!(back, povm);

        let d = dilate(&povm).unwrap();
        let dj = DilationJson::from(&d);
        assert_eq!(dj.matrix(), *d.unitary());
    }

    #[test]
    fn confusion_json_round_trip() {
        let m = build_confusion_matrix(&ReadoutNoiseSpec::uniform(0.05).unwrap());
        let back = confusion_from_json(&confusion_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(confusion_from_json("[[1,0,0,0]]").is_err());
    }
}
