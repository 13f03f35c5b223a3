//! Serial kinematic chains from the base frame to a contact frame, forward
//! kinematics and first-order propagation of encoder noise.
//!
//! Frames are numbered `1..=N+1` (base is 1, contact is N+1). Link `n`
//! contributes the transform `[A_n Exp(alpha_n * axis_n), t_n]`; the last
//! link is fixed. Internally indices are zero-based: link `n` is `links[n-1]`.

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, hat, log_so3, Rotation};

/// Coordinate axis a revolute joint turns about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    /// Embeds a joint angle as a rotation vector along this axis.
    pub fn dagger(self, angle: f64) -> Vector3<f64> {
        self.unit() * angle
    }

    pub fn parse(tag: &str) -> Option<Option<Axis>> {
        match tag.to_ascii_uppercase().as_str() {
            "X" => Some(Some(Axis::X)),
            "Y" => Some(Some(Axis::Y)),
            "Z" => Some(Some(Axis::Z)),
            "FIXED" | "-" => Some(None),
            _ => None,
        }
    }
}

/// Constant link geometry plus the joint axis (absent on the terminal link).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkParam {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub axis: Option<Axis>,
}

impl LinkParam {
    pub fn revolute(translation: Vector3<f64>, axis: Axis) -> Self {
        Self {
            rotation: Rotation::identity(),
            translation,
            axis: Some(axis),
        }
    }

    pub fn fixed(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation::identity(),
            translation,
            axis: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    links: Vec<LinkParam>,
}

impl KinematicChain {
    /// Requires at least one joint and an axis on every link except the last.
    pub fn new(links: Vec<LinkParam>) -> Result<Self> {
        if links.len() < 2 {
            return Err(Error::InvalidConfig(
                "a chain needs at least one joint and a terminal link".into(),
            ));
        }
        let (last, joints) = links.split_last().unwrap();
        if last.axis.is_some() {
            return Err(Error::InvalidConfig("the terminal link must be fixed".into()));
        }
        if joints.iter().any(|l| l.axis.is_none()) {
            return Err(Error::InvalidConfig(
                "only the terminal link may lack a joint axis".into(),
            ));
        }
        Ok(Self { links })
    }

    /// Planar 3-link leg: hip pitch, knee pitch, fixed foot block.
    pub fn planar_demo() -> Self {
        Self::new(vec![
            LinkParam::revolute(Vector3::new(0.0, 0.0, -0.5), Axis::Y),
            LinkParam::revolute(Vector3::new(0.0, 0.0, -0.5), Axis::Y),
            LinkParam::fixed(Vector3::new(0.05, 0.0, -0.05)),
        ])
        .expect("valid demo chain")
    }

    /// Seven-link leg (hip yaw/roll/pitch, knee, ankle pitch/roll, sole).
    /// `lateral` is the hip offset along base y (positive for the left leg).
    pub fn six_dof_leg(lateral: f64) -> Self {
        Self::new(vec![
            LinkParam::revolute(Vector3::new(0.0, lateral, -0.1), Axis::Z),
            LinkParam::revolute(Vector3::zeros(), Axis::X),
            LinkParam::revolute(Vector3::zeros(), Axis::Y),
            LinkParam::revolute(Vector3::new(0.0, 0.0, -0.5), Axis::Y),
            LinkParam::revolute(Vector3::new(0.0, 0.0, -0.5), Axis::Y),
            LinkParam::revolute(Vector3::zeros(), Axis::X),
            LinkParam::fixed(Vector3::new(0.0, 0.0, -0.05)),
        ])
        .expect("valid leg chain")
    }

    pub fn links(&self) -> &[LinkParam] {
        &self.links
    }

    /// Number of links N.
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Number of encoders, N - 1.
    pub fn encoder_count(&self) -> usize {
        self.links.len() - 1
    }

    fn check_angles(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.encoder_count() {
            return Err(Error::DimensionMismatch {
                expected: self.encoder_count(),
                got: alpha.len(),
            });
        }
        Ok(())
    }

    /// Rotation of link `n` (1-based) relative to frame `n`.
    fn link_rotation(&self, alpha: &[f64], n: usize) -> Rotation {
        let link = &self.links[n - 1];
        match link.axis {
            Some(axis) => link.rotation * exp_so3(&axis.dagger(alpha[n - 1])),
            None => link.rotation,
        }
    }

    /// Rotations `A_{1,n}` for `n = 1..=N+1` (index 0 holds `A_11 = I`).
    fn base_rotations(&self, alpha: &[f64]) -> Vec<Rotation> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut acc = Rotation::identity();
        out.push(acc);
        for n in 1..=self.len() {
            acc = acc * self.link_rotation(alpha, n);
            out.push(acc);
        }
        out
    }
}

/// Timestamped joint angles for one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderReading {
    pub timestamp: f64,
    pub angles: Vec<f64>,
}

/// Contact pose in the base frame from the homogeneous-transform product.
pub fn forward_kinematics(chain: &KinematicChain, alpha: &EncoderReading) -> Result<(Rotation, Vector3<f64>)> {
    fk_angles(chain, &alpha.angles)
}

/// Same as [`forward_kinematics`] on a bare angle slice.
pub fn fk_angles(chain: &KinematicChain, alpha: &[f64]) -> Result<(Rotation, Vector3<f64>)> {
    chain.check_angles(alpha)?;
    let mut rot = Rotation::identity();
    let mut pos = Vector3::zeros();
    for n in 1..=chain.len() {
        pos += rot * chain.links[n - 1].translation;
        rot = rot * chain.link_rotation(alpha, n);
    }
    Ok((rot, pos))
}

/// `A_ij(alpha)`, the rotation of frame `j` relative to frame `i` (1-based,
/// `1 <= i <= j <= N+1`).
pub fn relative_rotation(chain: &KinematicChain, alpha: &[f64], i: usize, j: usize) -> Result<Rotation> {
    chain.check_angles(alpha)?;
    if i < 1 || i > j || j > chain.len() + 1 {
        return Err(Error::IndexOutOfRange {
            i,
            j,
            links: chain.len(),
        });
    }
    Ok((i..j).fold(Rotation::identity(), |acc, k| acc * chain.link_rotation(alpha, k)))
}

/// `A_ij(alpha + beta)` through the factored product
/// `A_ij(alpha) * prod_k Exp(A_{k+1,j}(alpha)ᵀ beta_k†)`.
pub fn offset_rotation(chain: &KinematicChain, alpha: &[f64], beta: &[f64], i: usize, j: usize) -> Result<Rotation> {
    chain.check_angles(beta)?;
    let mut out = relative_rotation(chain, alpha, i, j)?;
    for k in i..j {
        let Some(axis) = chain.links[k - 1].axis else {
            continue;
        };
        let tail = relative_rotation(chain, alpha, k + 1, j)?;
        out = out * exp_so3(&(tail.transpose() * axis.dagger(beta[k - 1])));
    }
    Ok(out)
}

/// Linear encoder-noise map: `(Q, S)` with `3 x 3(N-1)` blocks per joint.
pub fn fk_noise_system(chain: &KinematicChain, alpha: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    chain.check_angles(alpha)?;
    let n_links = chain.len();
    let joints = chain.encoder_count();
    let base = chain.base_rotations(alpha);
    // tail[m] = A_{m,N+1} for m in 1..=N+1
    let mut tail = vec![Rotation::identity(); n_links + 2];
    for m in (1..=n_links).rev() {
        tail[m] = chain.link_rotation(alpha, m) * tail[m + 1];
    }
    let mut q = DMatrix::zeros(3, 3 * joints);
    let mut s = DMatrix::zeros(3, 3 * joints);
    for i in 1..=joints {
        let qi = tail[i + 1].transpose();
        q.fixed_view_mut::<3, 3>(0, 3 * (i - 1)).copy_from(qi.matrix());
        // A_{k+1,n+1} = A_{1,k+1}ᵀ A_{1,n+1}
        let mut si = Matrix3::zeros();
        for n in i..=joints {
            let a1 = base[n].matrix();
            let rel = base[i].transpose() * base[n];
            si -= a1 * hat(&chain.links[n].translation) * rel.matrix().transpose();
        }
        s.fixed_view_mut::<3, 3>(0, 3 * (i - 1)).copy_from(&si);
    }
    Ok((q, s))
}

/// Encoder covariance lifted to the dagger space: block `k` is
/// `sigma_k² * axis_k axis_kᵀ`.
pub fn dagger_covariance(chain: &KinematicChain, encoder_sigma: &[f64]) -> Result<DMatrix<f64>> {
    chain.check_angles(encoder_sigma)?;
    let joints = chain.encoder_count();
    let mut cov = DMatrix::zeros(3 * joints, 3 * joints);
    for (k, &sigma) in encoder_sigma.iter().enumerate() {
        if sigma < 0.0 || sigma.is_nan() {
            return Err(Error::NegativeSigma(k));
        }
        let e = chain.links[k].axis.expect("joint link").unit();
        cov.fixed_view_mut::<3, 3>(3 * k, 3 * k)
            .copy_from(&(e * e.transpose() * (sigma * sigma)));
    }
    Ok(cov)
}

/// 6x6 covariance of `(delta fk_R, delta fk_p)` from per-joint encoder std-devs.
pub fn fk_covariance(chain: &KinematicChain, alpha: &[f64], encoder_sigma: &[f64]) -> Result<Matrix6<f64>> {
    let sigma = dagger_covariance(chain, encoder_sigma)?;
    let (q, s) = fk_noise_system(chain, alpha)?;
    let mut qs = DMatrix::zeros(6, q.ncols());
    qs.rows_mut(0, 3).copy_from(&q);
    qs.rows_mut(3, 3).copy_from(&s);
    let full = &qs * sigma * qs.transpose();
    let mut out = Matrix6::from_fn(|r, c| full[(r, c)]);
    out = (out + out.transpose()) * 0.5;
    Ok(out)
}

/// Forward kinematics together with its noise model.
#[derive(Clone, Debug, PartialEq)]
pub struct FkResult {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub covariance: Matrix6<f64>,
}

impl FkResult {
    pub fn evaluate(chain: &KinematicChain, alpha: &[f64], encoder_sigma: &[f64]) -> Result<Self> {
        let (rotation, position) = fk_angles(chain, alpha)?;
        let (q, s) = fk_noise_system(chain, alpha)?;
        let covariance = fk_covariance(chain, alpha, encoder_sigma)?;
        Ok(Self {
            rotation,
            position,
            q,
            s,
            covariance,
        })
    }
}

/// Geometric Jacobian columns: right-perturbation rotation rows over
/// position rows, one column per joint.
fn joint_jacobian(chain: &KinematicChain, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let (q, s) = fk_noise_system(chain, alpha)?;
    let joints = chain.encoder_count();
    let mut j = DMatrix::zeros(6, joints);
    for k in 0..joints {
        let e = chain.links[k].axis.expect("joint link").unit();
        let qk = q.fixed_view::<3, 3>(0, 3 * k) * e;
        // fk_p(alpha + eta) ≈ fk_p(alpha) + S eta†
        let sk = s.fixed_view::<3, 3>(0, 3 * k) * e;
        j.fixed_view_mut::<3, 1>(0, k).copy_from(&qk);
        j.fixed_view_mut::<3, 1>(3, k).copy_from(&sk);
    }
    Ok(j)
}

/// Damped Gauss-Newton inverse kinematics for a 6-joint chain, seeded at
/// `guess`. Fails with `InfeasibleChain` when the pose cannot be reached.
pub fn inverse_kinematics(
    chain: &KinematicChain,
    target_rotation: &Rotation,
    target_position: &Vector3<f64>,
    guess: &[f64],
) -> Result<Vec<f64>> {
    chain.check_angles(guess)?;
    if chain.encoder_count() != 6 {
        return Err(Error::DimensionMismatch {
            expected: 6,
            got: chain.encoder_count(),
        });
    }
    let mut alpha = guess.to_vec();
    let err_of = |alpha: &[f64]| -> Result<Vector6<f64>> {
        let (r, p) = fk_angles(chain, alpha)?;
        let rot = log_so3(&(r.transpose() * *target_rotation))?;
        let pos = target_position - p;
        Ok(Vector6::new(rot.x, rot.y, rot.z, pos.x, pos.y, pos.z))
    };
    let mut err = err_of(&alpha)?;
    for _ in 0..100 {
        if err.norm() < 1e-14 {
            break;
        }
        let j = joint_jacobian(chain, &alpha)?;
        let jm: SMatrix<f64, 6, 6> = SMatrix::from_fn(|r, c| j[(r, c)]);
        let step = match jm.lu().solve(&err) {
            Some(s) => s,
            None => return Err(Error::InfeasibleChain(err.norm())),
        };
        // limit steps so the iteration cannot jump between branches
        let scale = (0.5 / step.amax()).min(1.0);
        let trial: Vec<f64> = alpha.iter().zip(step.iter()).map(|(a, d)| a + scale * d).collect();
        let trial_err = err_of(&trial)?;
        if trial_err.norm() >= err.norm() && err.norm() < 1e-12 {
            // rounding floor reached
            break;
        }
        alpha = trial;
        err = trial_err;
    }
    if err.norm() > 1e-10 {
        return Err(Error::InfeasibleChain(err.norm()));
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::FRAC_PI_2;

    fn two_link() -> KinematicChain {
        KinematicChain::new(vec![
            LinkParam::revolute(Vector3::new(0.0, 0.0, -0.5), Axis::Y),
            LinkParam::fixed(Vector3::new(0.0, 0.0, -0.5)),
        ])
        .unwrap()
    }

    // 4x4 homogeneous product, independent of the library's recursion.
    fn homogeneous_fk(chain: &KinematicChain, alpha: &[f64]) -> nalgebra::Matrix4<f64> {
        let mut t = nalgebra::Matrix4::identity();
        for (n, link) in chain.links().iter().enumerate() {
            let r = match link.axis {
                Some(axis) => link.rotation * exp_so3(&axis.dagger(alpha[n])),
                None => link.rotation,
            };
            let mut h = nalgebra::Matrix4::identity();
            h.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
            h.fixed_view_mut::<3, 1>(0, 3).copy_from(&link.translation);
            t *= h;
        }
        t
    }

    fn random_chain(rng: &mut ChaCha8Rng, links: usize) -> KinematicChain {
        let axes = [Axis::X, Axis::Y, Axis::Z];
        let mut v = Vec::new();
        for n in 0..links {
            let rot = exp_so3(&Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let t = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let axis = (n + 1 < links).then(|| axes[rng.random_range(0..3)]);
            v.push(LinkParam {
                rotation: rot,
                translation: t,
                axis,
            });
        }
        KinematicChain::new(v).unwrap()
    }

    #[test]
    fn straight_two_link_chain() {
        let chain = two_link();
        let (r, p) = fk_angles(&chain, &[0.0]).unwrap();
        assert_eq!(r, Rotation::identity());
        assert!((p - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn bent_two_link_chain_matches_homogeneous_product() {
        let chain = two_link();
        let (_, p) = fk_angles(&chain, &[FRAC_PI_2]).unwrap();
        let h = homogeneous_fk(&chain, &[FRAC_PI_2]);
        assert!((p - Vector3::new(-0.5, 0.0, -0.5)).norm() < 1e-15);
        assert!((p - h.fixed_view::<3, 1>(0, 3)).norm() < 1e-15);
    }

    #[test]
    fn sum_form_equals_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for links in 2..=7 {
            let chain = random_chain(&mut rng, links);
            let alpha: Vec<f64> = (0..links - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (r, p) = fk_angles(&chain, &alpha).unwrap();
            let h = homogeneous_fk(&chain, &alpha);
            assert!((r.matrix() - h.fixed_view::<3, 3>(0, 0)).norm() < 1e-12);
            assert!((p - h.fixed_view::<3, 1>(0, 3)).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let chain = two_link();
        assert!(matches!(
            fk_angles(&chain, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn chain_validation() {
        assert!(KinematicChain::new(vec![LinkParam::fixed(Vector3::zeros())]).is_err());
        assert!(KinematicChain::new(vec![
            LinkParam::revolute(Vector3::zeros(), Axis::X),
            LinkParam::revolute(Vector3::zeros(), Axis::X),
        ])
        .is_err());
    }

    #[test]
    fn relative_rotation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chain = random_chain(&mut rng, 3);
        let alpha = [0.4, -1.3];
        assert_eq!(relative_rotation(&chain, &alpha, 2, 2).unwrap(), Rotation::identity());
        let full = relative_rotation(&chain, &alpha, 1, 4).unwrap();
        assert_eq!(full, fk_angles(&chain, &alpha).unwrap().0);
        let a12 = relative_rotation(&chain, &alpha, 1, 2).unwrap();
        let a23 = relative_rotation(&chain, &alpha, 2, 3).unwrap();
        let a13 = relative_rotation(&chain, &alpha, 1, 3).unwrap();
        assert!(((a12 * a23).matrix() - a13.matrix()).norm() < 1e-12);
        assert!(matches!(
            relative_rotation(&chain, &alpha, 3, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(relative_rotation(&chain, &alpha, 1, 5).is_err());
        assert!(relative_rotation(&chain, &alpha, 0, 2).is_err());
    }

    #[test]
    fn offset_rotation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let chain = random_chain(&mut rng, 3);
        let alpha = [0.3, 0.9];
        for (i, j) in [(1, 2), (1, 3), (1, 4), (2, 4), (3, 4)] {
            let zero = offset_rotation(&chain, &alpha, &[0.0, 0.0], i, j).unwrap();
            assert_eq!(zero, relative_rotation(&chain, &alpha, i, j).unwrap());
        }
        let beta = [0.17, -0.41];
        let shifted = [alpha[0] + beta[0], alpha[1] + beta[1]];
        for (i, j) in [(1, 3), (1, 4), (2, 3), (2, 4)] {
            let factored = offset_rotation(&chain, &alpha, &beta, i, j).unwrap();
            let direct = relative_rotation(&chain, &shifted, i, j).unwrap();
            assert!((factored.matrix() - direct.matrix()).norm() < 1e-12);
        }
        // beta_1 sits outside [2, 3]
        let outside = offset_rotation(&chain, &alpha, &[0.8, 0.0], 2, 3).unwrap();
        assert_eq!(outside, relative_rotation(&chain, &alpha, 2, 3).unwrap());
    }

    #[test]
    fn single_joint_noise_system() {
        let chain = KinematicChain::new(vec![
            LinkParam::revolute(Vector3::new(0.1, 0.0, -0.3), Axis::Z),
            LinkParam {
                rotation: Rotation::about_x(0.4),
                translation: Vector3::new(0.0, 0.2, -0.4),
                axis: None,
            },
        ])
        .unwrap();
        let (q, _) = fk_noise_system(&chain, &[0.0]).unwrap();
        let expected = Rotation::about_x(0.4).transpose();
        assert!((q.fixed_view::<3, 3>(0, 0) - expected.matrix()).norm() < 1e-15);
    }

    #[test]
    fn first_order_noise_decays_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chain = random_chain(&mut rng, 5);
        let alpha: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (q, s) = fk_noise_system(&chain, &alpha).unwrap();
        let (r0, p0) = fk_angles(&chain, &alpha).unwrap();
        let errors = |h: f64| {
            let eta: Vec<f64> = dir.iter().map(|d| d * h).collect();
            let mut eta_dag = nalgebra::DVector::zeros(12);
            for (k, (link, e)) in chain.links().iter().zip(&eta).take(4).enumerate() {
                let v = link.axis.unwrap().dagger(*e);
                eta_dag.fixed_rows_mut::<3>(3 * k).copy_from(&v);
            }
            let minus: Vec<f64> = alpha.iter().zip(&eta).map(|(a, e)| a - e).collect();
            let (r1, p1) = fk_angles(&chain, &minus).unwrap();
            let rot = log_so3(&(r0.transpose() * r1)).unwrap() + &q * &eta_dag;
            // fk_p(alpha - eta) ≈ fk_p(alpha) - S eta
            let pos = (p1 - p0) + &s * &eta_dag;
            (rot.norm(), pos.norm())
        };
        let (r1, p1) = errors(1e-2);
        let (r2, p2) = errors(5e-3);
        assert!((r1 / r2 - 4.0).abs() < 0.2, "rotation ratio {}", r1 / r2);
        assert!((p1 / p2 - 4.0).abs() < 0.2, "position ratio {}", p1 / p2);
    }

    #[test]
    fn noise_system_is_continuous() {
        let chain = KinematicChain::six_dof_leg(0.1);
        let alpha = [0.05, -0.02, -0.3, 0.6, -0.3, 0.02];
        let (q0, s0) = fk_noise_system(&chain, &alpha).unwrap();
        let bumped: Vec<f64> = alpha.iter().map(|a| a + 1e-7).collect();
        let (q1, s1) = fk_noise_system(&chain, &bumped).unwrap();
        assert!((q1 - q0).amax() < 1e-5);
        assert!((s1 - s0).amax() < 1e-5);
    }

    #[test]
    fn covariance_zero_and_scaling() {
        let chain = KinematicChain::planar_demo();
        let alpha = [-0.3, 0.6];
        let zero = fk_covariance(&chain, &alpha, &[0.0, 0.0]).unwrap();
        assert_eq!(zero, Matrix6::zeros());
        let one = fk_covariance(&chain, &alpha, &[0.01, 0.02]).unwrap();
        let two = fk_covariance(&chain, &alpha, &[0.02, 0.04]).unwrap();
        assert!((two - one * 4.0).norm() < 1e-18);
        assert!((one - one.transpose()).norm() == 0.0);
        assert!(matches!(
            fk_covariance(&chain, &alpha, &[0.01, -0.01]),
            Err(Error::NegativeSigma(1))
        ));
    }

    #[test]
    fn planar_covariance_matches_monte_carlo() {
        let chain = two_link();
        let alpha = [FRAC_PI_2];
        let sigma = 0.01;
        let cov = fk_covariance(&chain, &alpha, &[sigma]).unwrap();
        let (r0, p0) = fk_angles(&chain, &alpha).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut mc = Matrix6::zeros();
        for _ in 0..n {
            let eta: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            let (r1, p1) = fk_angles(&chain, &[alpha[0] + eta]).unwrap();
            let rot = log_so3(&(r0.transpose() * r1)).unwrap();
            let pos = p1 - p0;
            let v = Vector6::new(rot.x, rot.y, rot.z, pos.x, pos.y, pos.z);
            mc += v * v.transpose();
        }
        mc /= n as f64;
        assert!((mc - cov).norm() / cov.norm() < 0.1);
    }

    #[test]
    fn inverse_kinematics_reaches_target() {
        let chain = KinematicChain::six_dof_leg(0.1);
        let truth = [0.1, 0.05, -0.35, 0.7, -0.3, -0.04];
        let (r, p) = fk_angles(&chain, &truth).unwrap();
        let guess = [0.0, 0.0, -0.3, 0.6, -0.3, 0.0];
        let sol = inverse_kinematics(&chain, &r, &p, &guess).unwrap();
        let (r2, p2) = fk_angles(&chain, &sol).unwrap();
        assert!((r2.matrix() - r.matrix()).norm() < 1e-12);
        assert!((p2 - p).norm() < 1e-12);
    }

    #[test]
    fn inverse_kinematics_reports_unreachable() {
        let chain = KinematicChain::six_dof_leg(0.1);
        let guess = [0.0, 0.0, -0.3, 0.6, -0.3, 0.0];
        let far = Vector3::new(0.0, 0.1, -3.0);
        assert!(matches!(
            inverse_kinematics(&chain, &Rotation::identity(), &far, &guess),
            Err(Error::InfeasibleChain(_))
        ));
    }
}
