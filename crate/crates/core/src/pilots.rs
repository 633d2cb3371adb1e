//! Uplink pilot protocol: orthogonal pilots repeated over sub-frames with per-sub-frame
//! RIS phases, per-user decorrelation at the BS, and pilot overhead accounting.

use std::io::{Read, Write};

use rand::Rng;

use crate::channel::{Links, RisConfig};
use crate::error::{check_dim, Error, Result};
use crate::math::{complex_normal, CMat, CVec, C64};

/// Orthogonal pilot sequences: column `k` is the pilot of the `k`-th transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    x: CMat,
    power: f64,
}

/// Scaled DFT pilots of length `len`, so that `x_k^H x_i = len * power * delta_ki`.
pub fn make_pilots(len: usize, power: f64) -> Result<PilotMatrix> {
    if len < 1 {
        return Err(Error::arg("pilot length must be >= 1"));
    }
    if !(power > 0.0) {
        return Err(Error::arg("pilot power must be positive"));
    }
    let amp = power.sqrt();
    let x = CMat::from_fn(len, len, |l, k| {
        let phase = -std::f64::consts::TAU * ((l * k) % len) as f64 / len as f64;
        C64::from_polar(amp, phase)
    });
    Ok(PilotMatrix { x, power })
}

impl PilotMatrix {
    /// Wraps an arbitrary square pilot matrix; orthogonality is checked on decorrelation.
    pub fn from_matrix(x: CMat, power: f64) -> Result<Self> {
        if x.nrows() != x.ncols() || x.is_empty() {
            return Err(Error::arg("pilot matrix must be square and non-empty"));
        }
        Ok(Self { x, power })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn matrix(&self) -> &CMat {
        &self.x
    }

    /// Largest `|x_k^H x_i - len * power * delta_ki|`, relative to `len * power`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.x.adjoint() * &self.x;
        let target = self.len() as f64 * self.power;
        let mut worst: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { target } else { 0.0 };
                worst = worst.max((gram[(i, j)] - C64::from(want)).norm() / target);
            }
        }
        worst
    }
}

/// One received sub-frame `Y^(d)` with the RIS phases it was received under.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubframe {
    pub y: CMat,
    pub theta: RisConfig,
    /// Per-antenna noise variance of the raw samples.
    pub noise_var: f64,
}

/// Transmits the first `channels.len()` pilot columns through the given effective
/// channels: `Y = sum_k h_k x_k^H + N` with i.i.d. `CN(0, noise_var)` noise.
pub fn receive_block<R: Rng + ?Sized>(
    effective: &[CVec],
    pilots: &PilotMatrix,
    noise_var: f64,
    rng: &mut R,
) -> Result<CMat> {
    if effective.len() > pilots.len() {
        return Err(Error::arg(format!(
            "{} transmitters but only {} orthogonal pilots",
            effective.len(),
            pilots.len()
        )));
    }
    let m = effective.first().map_or(0, |h| h.len());
    let mut y = CMat::zeros(m, pilots.len());
    for (k, h) in effective.iter().enumerate() {
        check_dim("effective channel length", m, h.len())?;
        y += h * pilots.x.column(k).adjoint();
    }
    if noise_var > 0.0 {
        let sd = C64::from(noise_var.sqrt());
        for c in 0..y.ncols() {
            for r in 0..m {
                y[(r, c)] += complex_normal(rng) * sd;
            }
        }
    }
    Ok(y)
}

/// Uplink sub-frame of all `K` users under RIS phases `theta`.
pub fn uplink_receive_subframe<R: Rng + ?Sized>(
    links: Links<'_>,
    theta: &RisConfig,
    pilots: &PilotMatrix,
    noise_var: f64,
    rng: &mut R,
) -> Result<RawSubframe> {
    check_dim("RIS phase vector length", links.elements(), theta.len())?;
    check_dim("pilot length", links.users(), pilots.len())?;
    let all: Vec<usize> = (0..links.users()).collect();
    let effective = links.effective_all(&all, theta.as_vector());
    let y = receive_block(&effective, pilots, noise_var, rng)?;
    Ok(RawSubframe {
        y,
        theta: theta.clone(),
        noise_var,
    })
}

/// Decorrelated pilot observations of every user across sub-frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    /// `Y_k`: `M x D`, column `d` is the observation `y_k^(d)`.
    pub columns: Vec<CMat>,
    pub uplink_phases: Vec<RisConfig>,
    /// Factor applied to `Y^(d) x_k`, i.e. `1 / (len * P_u)`.
    pub scale: f64,
    /// Noise variance of each decorrelated entry.
    pub noise_var: f64,
}

/// Orthogonality tolerance on the pilot Gram matrix, relative to `len * P_u`.
const ORTHOGONALITY_TOL: f64 = 1e-9;

/// Decorrelates `users` transmitters out of each raw sub-frame:
/// `y_k^(d) = Y^(d) x_k / (len * P_u)`.
pub fn decorrelate_collect(raw: &[RawSubframe], pilots: &PilotMatrix, users: usize) -> Result<PilotBlock> {
    if raw.is_empty() {
        return Err(Error::Empty("raw sub-frames"));
    }
    if users > pilots.len() {
        return Err(Error::arg("more users than pilot sequences"));
    }
    let err = pilots.orthogonality_error();
    if err > ORTHOGONALITY_TOL {
        return Err(Error::NonOrthogonalPilots(err));
    }
    let m = raw[0].y.nrows();
    let scale = 1.0 / (pilots.len() as f64 * pilots.power);
    let mut columns = vec![CMat::zeros(m, raw.len()); users];
    for (d, sub) in raw.iter().enumerate() {
        check_dim("sub-frame rows", m, sub.y.nrows())?;
        check_dim("sub-frame columns", pilots.len(), sub.y.ncols())?;
        for (k, yk) in columns.iter_mut().enumerate() {
            let col = (&sub.y * pilots.x.column(k)) * C64::from(scale);
            yk.set_column(d, &col);
        }
    }
    let noise_var = raw[0].noise_var * scale;
    Ok(PilotBlock {
        columns,
        uplink_phases: raw.iter().map(|s| s.theta.clone()).collect(),
        scale,
        noise_var,
    })
}

impl PilotBlock {
    pub fn depth(&self) -> usize {
        self.uplink_phases.len()
    }

    pub fn users(&self) -> usize {
        self.columns.len()
    }

    /// First `depth` sub-frames.
    pub fn prefix(&self, depth: usize) -> Result<PilotBlock> {
        if depth < 1 || depth > self.depth() {
            return Err(Error::arg(format!("prefix depth {depth} outside 1..={}", self.depth())));
        }
        Ok(PilotBlock {
            columns: self.columns.iter().map(|y| y.columns(0, depth).into_owned()).collect(),
            uplink_phases: self.uplink_phases[..depth].to_vec(),
            scale: self.scale,
            noise_var: self.noise_var,
        })
    }

    /// Keeps only the listed users, in the given order.
    pub fn select_users(&self, users: &[usize]) -> PilotBlock {
        PilotBlock {
            columns: users.iter().map(|&k| self.columns[k].clone()).collect(),
            uplink_phases: self.uplink_phases.clone(),
            scale: self.scale,
            noise_var: self.noise_var,
        }
    }

    /// Writes `user,subframe,y0_re,y0_im,...` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.columns.first().map_or(0, |y| y.nrows());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["user".to_string(), "subframe".to_string()];
        for i in 0..m {
            header.push(format!("y{i}_re"));
            header.push(format!("y{i}_im"));
        }
        wtr.write_record(&header)?;
        for (k, y) in self.columns.iter().enumerate() {
            for d in 0..y.ncols() {
                let mut rec = vec![k.to_string(), d.to_string()];
                for i in 0..m {
                    rec.push(y[(i, d)].re.to_string());
                    rec.push(y[(i, d)].im.to_string());
                }
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `subframe,theta0_re,theta0_im,...` rows.
    pub fn write_phases_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.uplink_phases.first().map_or(0, |t| t.len());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["subframe".to_string()];
        for i in 0..n {
            header.push(format!("theta{i}_re"));
            header.push(format!("theta{i}_im"));
        }
        wtr.write_record(&header)?;
        for (d, t) in self.uplink_phases.iter().enumerate() {
            let mut rec = vec![d.to_string()];
            for z in t.as_vector().iter() {
                rec.push(z.re.to_string());
                rec.push(z.im.to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads back a block written by [`write_csv`](Self::write_csv) and
    /// [`write_phases_csv`](Self::write_phases_csv).
    pub fn read_csv<R1: Read, R2: Read>(pilots: R1, phases: R2, scale: f64, noise_var: f64) -> Result<PilotBlock> {
        let mut uplink_phases = Vec::new();
        for rec in csv::Reader::from_reader(phases).records() {
            let rec = rec?;
            let vals = parse_floats(&rec, 1)?;
            let theta = CVec::from_iterator(vals.len() / 2, vals.chunks(2).map(|p| C64::new(p[0], p[1])));
            uplink_phases.push(RisConfig::new(theta)?);
        }
        let depth = uplink_phases.len();
        let mut columns: Vec<CMat> = Vec::new();
        for rec in csv::Reader::from_reader(pilots).records() {
            let rec = rec?;
            let user: usize = field(&rec, 0)?;
            let d: usize = field(&rec, 1)?;
            let vals = parse_floats(&rec, 2)?;
            let m = vals.len() / 2;
            while columns.len() <= user {
                columns.push(CMat::zeros(m, depth));
            }
            if d >= depth {
                return Err(Error::arg(format!("sub-frame index {d} beyond {depth} phase rows")));
            }
            check_dim("pilot CSV antenna count", columns[user].nrows(), m)?;
            for i in 0..m {
                columns[user][(i, d)] = C64::new(vals[2 * i], vals[2 * i + 1]);
            }
        }
        Ok(PilotBlock {
            columns,
            uplink_phases,
            scale,
            noise_var,
        })
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::arg(format!("bad CSV field {i} in {rec:?}")))
}

fn parse_floats(rec: &csv::StringRecord, skip: usize) -> Result<Vec<f64>> {
    let vals = (skip..rec.len())
        .map(|i| field::<f64>(rec, i))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() % 2 != 0 {
        return Err(Error::arg("odd number of interleaved real/imag values"));
    }
    Ok(vals)
}

/// Pilot symbols per coherence period: `K D_theta + M D_W Upsilon`.
pub fn pilot_overhead(users: u64, d_theta: u64, antennas: u64, d_w: u64, slots: u64) -> u64 {
    users * d_theta + antennas * d_w * slots
}
