//! Line-oriented text format for datasets.
//!
//! ```text
//! IMU t ax ay az gx gy gz
//! ENC t foot a1 ... an
//! CNT t foot {0|1}
//! LC  t_i t_j r00 r01 ... r22 tx ty tz c00 c01 ... c55   (21 upper-triangular entries)
//! TRU t r00 ... r22 px py pz vx vy vz
//! ```
//!
//! Numbers are written with 17 significant digits so a write/read cycle is
//! bit-exact. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix6, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::EncoderReading;
use crate::manifold::{Pose, Rotation};
use crate::preintegration::{ContactEvent, ImuSample};
use crate::sim::{Dataset, LoopClosure, TruthState};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_all(line: &mut String, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        line.push(' ');
        line.push_str(&fmt_f64(x));
    }
}

pub fn dataset_to_string(d: &Dataset) -> String {
    let mut out = String::new();
    for s in &d.imu {
        out.push_str("IMU");
        push_all(&mut out, [s.timestamp]);
        push_all(&mut out, s.accel.iter().chain(s.gyro.iter()).copied());
        out.push('\n');
    }
    for (foot, stream) in d.encoders.iter().enumerate() {
        for r in stream {
            out.push_str("ENC");
            push_all(&mut out, [r.timestamp]);
            let _ = write!(out, " {foot}");
            push_all(&mut out, r.angles.iter().copied());
            out.push('\n');
        }
    }
    for e in &d.contacts {
        out.push_str("CNT");
        push_all(&mut out, [e.timestamp]);
        let _ = writeln!(out, " {} {}", e.foot, u8::from(e.in_contact));
    }
    for lc in &d.loop_closures {
        out.push_str("LC");
        push_all(&mut out, [lc.t_i, lc.t_j]);
        push_all(&mut out, lc.pose.rotation.row_major());
        push_all(&mut out, lc.pose.translation.iter().copied());
        for r in 0..6 {
            push_all(&mut out, (r..6).map(|c| lc.covariance[(r, c)]));
        }
        out.push('\n');
    }
    for t in &d.truth {
        out.push_str("TRU");
        push_all(&mut out, [t.timestamp]);
        push_all(&mut out, t.rotation.row_major());
        push_all(&mut out, t.position.iter().chain(t.velocity.iter()).copied());
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_string(d))?;
    Ok(())
}

struct LineParser<'a> {
    path: &'a str,
    line: usize,
}

impl LineParser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn floats(&self, toks: &[&str]) -> Result<Vec<f64>> {
        toks.iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| self.err(format!("bad number {t:?}")))
            })
            .collect()
    }

    fn index(&self, tok: &str) -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| self.err(format!("bad foot id {tok:?}")))
    }

    fn expect_len(&self, toks: &[&str], n: usize, tag: &str) -> Result<()> {
        if toks.len() != n {
            return Err(self.err(format!("{tag} record needs {n} fields, got {}", toks.len())));
        }
        Ok(())
    }

    fn rotation(&self, v: &[f64]) -> Result<Rotation> {
        Rotation::from_row_slice(v).map_err(|e| self.err(format!("invalid rotation: {e}")))
    }
}

pub fn dataset_from_str(text: &str, path: &str) -> Result<Dataset> {
    let mut d = Dataset::default();
    let mut p = LineParser { path, line: 0 };
    for (k, raw) in text.lines().enumerate() {
        p.line = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (tag, rest) = toks.split_first().expect("non-empty line");
        match *tag {
            "IMU" => {
                p.expect_len(rest, 7, "IMU")?;
                let v = p.floats(rest)?;
                d.imu.push(ImuSample {
                    timestamp: v[0],
                    accel: Vector3::new(v[1], v[2], v[3]),
                    gyro: Vector3::new(v[4], v[5], v[6]),
                });
            }
            "ENC" => {
                if rest.len() < 3 {
                    return Err(p.err("ENC record needs a time, a foot id and angles"));
                }
                let t = p.floats(&rest[..1])?[0];
                let foot = p.index(rest[1])?;
                let angles = p.floats(&rest[2..])?;
                if d.encoders.len() <= foot {
                    d.encoders.resize(foot + 1, Vec::new());
                }
                if let Some(prev) = d.encoders[foot].first() {
                    if prev.angles.len() != angles.len() {
                        return Err(p.err(format!(
                            "foot {foot} has {} angles here but {} earlier",
                            angles.len(),
                            prev.angles.len()
                        )));
                    }
                }
                d.encoders[foot].push(EncoderReading { timestamp: t, angles });
            }
            "CNT" => {
                p.expect_len(rest, 3, "CNT")?;
                let t = p.floats(&rest[..1])?[0];
                let foot = p.index(rest[1])?;
                let in_contact = match rest[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(p.err(format!("contact flag must be 0 or 1, got {other:?}"))),
                };
                d.contacts.push(ContactEvent {
                    timestamp: t,
                    foot,
                    in_contact,
                });
            }
            "LC" => {
                p.expect_len(rest, 2 + 9 + 3 + 21, "LC")?;
                let v = p.floats(rest)?;
                let rotation = p.rotation(&v[2..11])?;
                let mut cov = Matrix6::zeros();
                let mut k = 14;
                for r in 0..6 {
                    for c in r..6 {
                        cov[(r, c)] = v[k];
                        cov[(c, r)] = v[k];
                        k += 1;
                    }
                }
                d.loop_closures.push(LoopClosure {
                    t_i: v[0],
                    t_j: v[1],
                    pose: Pose::new(rotation, Vector3::new(v[11], v[12], v[13])),
                    covariance: cov,
                });
            }
            "TRU" => {
                p.expect_len(rest, 1 + 9 + 3 + 3, "TRU")?;
                let v = p.floats(rest)?;
                d.truth.push(TruthState {
                    timestamp: v[0],
                    rotation: p.rotation(&v[1..10])?,
                    position: Vector3::new(v[10], v[11], v[12]),
                    velocity: Vector3::new(v[13], v[14], v[15]),
                });
            }
            other => return Err(p.err(format!("unknown record tag {other:?}"))),
        }
    }
    p.line = 0;
    fn sorted(ts: impl Iterator<Item = f64>) -> bool {
        let ts: Vec<f64> = ts.collect();
        ts.windows(2).all(|w| w[1] > w[0])
    }
    if !sorted(d.imu.iter().map(|s| s.timestamp)) {
        return Err(p.err("IMU timestamps must strictly increase"));
    }
    for (f, s) in d.encoders.iter().enumerate() {
        if !sorted(s.iter().map(|r| r.timestamp)) {
            return Err(p.err(format!("ENC timestamps of foot {f} must strictly increase")));
        }
    }
    if d.contacts.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(p.err("CNT records must be time-sorted"));
    }
    Ok(d)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: name.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    dataset_from_str(&text, &name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{emit_loop_closures, generate_truth, NoiseConfig, SimConfig};

    #[test]
    fn roundtrip_is_exact() {
        let cfg = SimConfig {
            duration: 2.0,
            ..SimConfig::default()
        };
        let mut d = generate_truth(&cfg).unwrap();
        d.loop_closures = emit_loop_closures(&d.truth, 2, &NoiseConfig::default().lc_covariance());
        let d = crate::sim::corrupt(&d, &cfg.chains, &NoiseConfig::default(), 1).unwrap();
        let text = dataset_to_string(&d);
        let back = dataset_from_str(&text, "mem").unwrap();
        assert_eq!(back, d);
        assert_eq!(dataset_to_string(&back), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# header\nIMU 0 0 0 9.81 0 0 0\nIMU 0.005 0 0 x 0 0 0\n";
        match dataset_from_str(text, "d.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            dataset_from_str("CNT 0 0 2\n", "d"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            dataset_from_str("FOO 1\n", "d"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_dataset(Path::new("/nonexistent/data.txt")),
            Err(Error::Parse { line: 0, .. })
        ));
    }
}
