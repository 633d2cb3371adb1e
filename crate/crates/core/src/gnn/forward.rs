use super::{GnnModel, RVec};
use crate::channel::{BeamMatrix, RisConfig};
use crate::error::{check_dim, Error, Result};
use crate::math::{CMat, CVec, C64};
use crate::pilots::PilotBlock;

/// Standardized node features, one vector per user.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub nodes: Vec<RVec>,
}

impl NodeFeatures {
    pub fn users(&self) -> usize {
        self.nodes.len()
    }
}

/// `[alpha_k; vec(Re Y_k); vec(Im Y_k)]` with column-major `vec`.
pub fn raw_features(alpha: &[f64], block: &PilotBlock) -> Result<Vec<RVec>> {
    check_dim("weight vector length", block.users(), alpha.len())?;
    Ok(block
        .columns
        .iter()
        .zip(alpha)
        .map(|(y, &a)| {
            let mut v = Vec::with_capacity(1 + 2 * y.len());
            v.push(a);
            v.extend(y.iter().map(|z| z.re));
            v.extend(y.iter().map(|z| z.im));
            RVec::from_vec(v)
        })
        .collect())
}

/// Raw features standardized with the model's constants.
pub fn build_features(alpha: &[f64], block: &PilotBlock, model: &GnnModel) -> Result<NodeFeatures> {
    check_dim("pilot sub-frames", model.arch().depth, block.depth())?;
    let m = block.columns.first().map_or(model.arch().antennas, |y| y.nrows());
    check_dim("pilot antennas", model.arch().antennas, m)?;
    let norm = model.norm();
    let nodes = raw_features(alpha, block)?
        .into_iter()
        .map(|raw| {
            let v = raw.zip_zip_map(
                &RVec::from_column_slice(&norm.mean),
                &RVec::from_column_slice(&norm.scale),
                |x, mu, s| (x - mu) / s,
            );
            if v.iter().all(|x| x.is_finite()) {
                Ok(v)
            } else {
                Err(Error::NonFinite("node features"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeFeatures { nodes })
}

/// Readouts of the RIS node (`2N`) and of every user node (`2M`).
#[derive(Debug, Clone, PartialEq)]
pub struct GnnOutput {
    pub ris: RVec,
    pub users: Vec<RVec>,
}

fn elementwise_mean(vs: &[RVec]) -> RVec {
    let mut acc = RVec::zeros(vs[0].len());
    for v in vs {
        acc += v;
    }
    acc / vs.len() as f64
}

/// Element-wise max over all vectors except `skip`; zeros when nothing is left.
fn max_excluding(vs: &[RVec], skip: usize) -> RVec {
    let mut acc: Option<RVec> = None;
    for (j, v) in vs.iter().enumerate() {
        if j == skip {
            continue;
        }
        acc = Some(match acc {
            None => v.clone(),
            Some(a) => a.zip_map(v, f64::max),
        });
    }
    acc.unwrap_or_else(|| RVec::zeros(vs[0].len()))
}

pub fn gnn_forward(model: &GnnModel, features: &NodeFeatures) -> Result<GnnOutput> {
    if features.nodes.is_empty() {
        return Err(Error::Empty("user nodes"));
    }
    let arch = model.arch();
    for x in &features.nodes {
        check_dim("node feature length", arch.feature_len(), x.len())?;
    }
    let mut users: Vec<RVec> = features.nodes.iter().map(|x| model.g_w.apply(x)).collect();
    let mut ris = model.g_theta.apply(&elementwise_mean(&users));
    let [f1, f2, f3, f4, f5] = &model.f;
    let h = arch.widths.hidden;
    for _ in 0..arch.rounds {
        let f2_ris = f2.apply(&ris);
        let f3_users: Vec<RVec> = users.iter().map(|v| f3.apply(v)).collect();
        let f5_users: Vec<RVec> = users.iter().map(|v| f5.apply(v)).collect();
        let mut cat = RVec::zeros(2 * h);
        cat.rows_mut(0, h).copy_from(&f2_ris);
        cat.rows_mut(h, h).copy_from(&elementwise_mean(&f3_users));
        let next_ris = f1.apply(&cat);
        let next_users = users
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let mut cat = RVec::zeros(3 * h);
                cat.rows_mut(0, h).copy_from(v);
                cat.rows_mut(h, h).copy_from(&f2_ris);
                cat.rows_mut(2 * h, h).copy_from(&max_excluding(&f5_users, k));
                f4.apply(&cat)
            })
            .collect();
        ris = next_ris;
        users = next_users;
    }
    Ok(GnnOutput {
        ris: model.l_2n.apply(&ris),
        users: users.iter().map(|v| model.l_2m.apply(v)).collect(),
    })
}

/// Unit-modulus phases from the RIS readout and beams from the user readouts, all
/// columns scaled by one factor to total power `power`.
pub fn decode_outputs(out: &GnnOutput, power: f64) -> Result<(RisConfig, BeamMatrix)> {
    if !out.ris.len().is_multiple_of(2) || out.ris.is_empty() {
        return Err(Error::arg("RIS readout must have even, non-zero length"));
    }
    let n = out.ris.len() / 2;
    let raw = CVec::from_fn(n, |i, _| C64::new(out.ris[i], out.ris[n + i]));
    let theta = RisConfig::project(&raw)?;

    let m2 = out.users.first().ok_or(Error::Empty("user readouts"))?.len();
    if !m2.is_multiple_of(2) || m2 == 0 {
        return Err(Error::arg("user readout must have even, non-zero length"));
    }
    let m = m2 / 2;
    let mut w = CMat::zeros(m, out.users.len());
    for (k, v) in out.users.iter().enumerate() {
        check_dim("user readout length", m2, v.len())?;
        for i in 0..m {
            w[(i, k)] = C64::new(v[i], v[m + i]);
        }
    }
    let total = w.norm_squared();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::arg("beamformer readouts are all zero"));
    }
    w *= C64::from((power / total).sqrt());
    Ok((theta, BeamMatrix::new(w)))
}

#[cfg(test)]
mod tests {
    use super::super::{Arch, Widths};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> Arch {
        Arch {
            antennas: 2,
            elements: 3,
            depth: 1,
            rounds: 2,
            widths: Widths {
                hidden: 8,
                embed_hidden: 6,
            },
        }
    }

    fn block(users: usize, m: usize, d: usize, f: impl Fn(usize, usize, usize) -> C64) -> PilotBlock {
        PilotBlock {
            columns: (0..users).map(|k| CMat::from_fn(m, d, |i, j| f(k, i, j))).collect(),
            uplink_phases: vec![RisConfig::from_phases(&[0.0; 3]).unwrap(); d],
            scale: 1.0,
            noise_var: 0.0,
        }
    }

    #[test]
    fn raw_feature_layout() {
        let b = block(1, 1, 1, |_, _, _| C64::new(1.0, 2.0));
        let f = raw_features(&[0.5], &b).unwrap();
        assert_eq!(f[0].as_slice(), &[0.5, 1.0, 2.0]);
        let z = block(2, 2, 2, |_, _, _| C64::new(0.0, 0.0));
        let f = raw_features(&[0.3, 0.7], &z).unwrap();
        assert_eq!(f[1].as_slice(), &[0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = block(1, 2, 2, |_, i, j| C64::new((10 * i + j) as f64, -((10 * i + j) as f64)));
        let f = raw_features(&[1.0], &b).unwrap();
        assert_eq!(f[0].as_slice(), &[1.0, 0.0, 10.0, 1.0, 11.0, -0.0, -10.0, -1.0, -11.0]);
    }

    #[test]
    fn depth_mismatch_is_rejected() {
        let model = GnnModel::random(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = block(2, 2, 2, |_, _, _| C64::new(0.1, 0.1));
        assert!(matches!(
            build_features(&[1.0, 1.0], &b, &model),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identical_users_get_identical_outputs() {
        let model = GnnModel::random(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = block(3, 2, 1, |_, i, _| C64::new(0.2 + i as f64, -0.4));
        let feats = build_features(&[1.0; 3], &b, &model).unwrap();
        let out = gnn_forward(&model, &feats).unwrap();
        assert_eq!(out.ris.len(), 6);
        assert_eq!(out.users[0], out.users[1]);
        assert_eq!(out.users[1], out.users[2]);
    }

    #[test]
    fn single_user_runs() {
        let model = GnnModel::random(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = block(1, 2, 1, |_, _, _| C64::new(0.5, 0.5));
        let out = gnn_forward(&model, &build_features(&[2.0], &b, &model).unwrap()).unwrap();
        assert_eq!(out.users.len(), 1);
        assert_eq!(out.users[0].len(), 4);
    }

    #[test]
    fn decode_cases() {
        let out = GnnOutput {
            ris: RVec::from_vec(vec![0.0, 3.0, 1.0, 0.0]),
            users: vec![
                RVec::from_vec(vec![1.0, 0.0, 0.0, 1.0]),
                RVec::from_vec(vec![0.0, 2.0, 0.0, 0.0]),
            ],
        };
        let (theta, w) = decode_outputs(&out, 0.5).unwrap();
        assert!((theta.phases()[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(theta.phases()[1].abs() < 1e-15);
        assert!((w.total_power() - 0.5).abs() < 1e-12);

        let doubled = GnnOutput {
            ris: &out.ris * 2.0,
            users: out.users.iter().map(|v| v * 2.0).collect(),
        };
        let (t2, w2) = decode_outputs(&doubled, 0.5).unwrap();
        assert!((t2.as_vector() - theta.as_vector()).norm() < 1e-15);
        assert!((w2.matrix() - w.matrix()).norm() < 1e-15);

        let zero_ris = GnnOutput {
            ris: RVec::zeros(4),
            users: out.users.clone(),
        };
        let (t0, _) = decode_outputs(&zero_ris, 1.0).unwrap();
        assert!(t0.max_modulus_error() < 1e-12);

        let zero_w = GnnOutput {
            ris: out.ris.clone(),
            users: vec![RVec::zeros(4)],
        };
        assert!(decode_outputs(&zero_w, 1.0).is_err());
    }
}
