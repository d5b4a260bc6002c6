use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{Error, Result};

/// Below this angle (radians) codes are treated as parallel.
pub const PARALLEL_EPS: f64 = 1e-4;
/// Guard for norm divisions.
pub const NORM_EPS: f64 = 1e-12;

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode(pub Vec<f32>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Scales to unit norm; zero vectors are rejected.
    pub fn normalized(v: Vec<f32>) -> Result<Self> {
        let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if n < NORM_EPS {
            return Err(Error::DegenerateLatent("zero vector cannot be normalized".into()));
        }
        Ok(LatentCode(v.into_iter().map(|x| (x as f64 / n) as f32).collect()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_slice(&self.0).view([1, self.0.len() as i64])
    }

    /// Splits an `[n, d]` tensor into codes.
    pub fn from_rows(t: &Tensor) -> Result<Vec<LatentCode>> {
        let size = t.size();
        if size.len() != 2 {
            return Err(Error::Shape(format!("expected [n, d] latent tensor, got {size:?}")));
        }
        let flat: Vec<f32> = Vec::try_from(t.to_kind(Kind::Float).contiguous().view(-1))?;
        Ok(flat
            .chunks(size[1].max(1) as usize)
            .map(|c| LatentCode(c.to_vec()))
            .collect())
    }
}

/// Angle between two unit vectors, computed stably as
/// `2 * atan2(|a - b|, |a + b|)`.
pub fn angle(a: &[f32], b: &[f32]) -> f64 {
    let (mut d, mut s) = (0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        d += (x - y).powi(2);
        s += (x + y).powi(2);
    }
    2.0 * d.sqrt().atan2(s.sqrt())
}

/// Great-circle interpolation with weight `alpha` on `z1`.
///
/// Nearly parallel codes fall back to normalized linear interpolation;
/// nearly antipodal codes have no unique great circle and are rejected.
pub fn slerp(z1: &LatentCode, z2: &LatentCode, alpha: f64) -> Result<LatentCode> {
    if z1.dim() != z2.dim() {
        return Err(Error::Shape(format!("latent dims {} and {} differ", z1.dim(), z2.dim())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if z1 == z2 || alpha == 1.0 {
        return Ok(z1.clone());
    }
    if alpha == 0.0 {
        return Ok(z2.clone());
    }
    let theta = angle(&z1.0, &z2.0);
    if theta > std::f64::consts::PI - PARALLEL_EPS {
        return Err(Error::DegenerateLatent(format!(
            "codes are antipodal (angle {theta:.6} rad); interpolation direction undefined"
        )));
    }
    let mixed: Vec<f32> = if theta < PARALLEL_EPS {
        z1.0.iter()
            .zip(&z2.0)
            .map(|(&a, &b)| (alpha * a as f64 + (1.0 - alpha) * b as f64) as f32)
            .collect()
    } else {
        let s = theta.sin();
        let (wa, wb) = ((alpha * theta).sin() / s, ((1.0 - alpha) * theta).sin() / s);
        z1.0.iter()
            .zip(&z2.0)
            .map(|(&a, &b)| (wa * a as f64 + wb * b as f64) as f32)
            .collect()
    };
    LatentCode::normalized(mixed)
}

/// L2-normalizes the rows of `[n, d]`, guarding the division.
pub fn normalize_rows(raw: &Tensor) -> Tensor {
    let norm = raw.square().sum_dim_intlist(1, true, Kind::Float).clamp_min(NORM_EPS * NORM_EPS).sqrt();
    raw / norm
}

/// Row-wise slerp of `[n, d]` code tensors with per-row weights `alpha`
/// (`[n]`) on `z1`. Differentiable; rows with identical codes or alpha at
/// an endpoint return the exact endpoint code.
pub fn slerp_rows(z1: &Tensor, z2: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let a = alpha.to_kind(Kind::Float).view([-1, 1]);
    let tiny = 1e-30;
    let d = (z1 - z2).square().sum_dim_intlist(1, true, Kind::Float).clamp_min(tiny).sqrt();
    let s = (z1 + z2).square().sum_dim_intlist(1, true, Kind::Float).clamp_min(tiny).sqrt();
    let theta = d.atan2(&s) * 2.0;
    let max_theta = theta.max().double_value(&[]);
    if max_theta > std::f64::consts::PI - PARALLEL_EPS {
        return Err(Error::DegenerateLatent(format!(
            "codes are antipodal (angle {max_theta:.6} rad); interpolation direction undefined"
        )));
    }
    let small = theta.lt(PARALLEL_EPS);
    let ones = theta.ones_like();
    let sin_t = theta.sin().where_self(&small.logical_not(), &ones);
    let wa = (&a * &theta).sin() / &sin_t;
    let b = a.ones_like() - &a;
    let wb = (&b * &theta).sin() / &sin_t;
    let arc = &wa * z1 + &wb * z2;
    let linear = normalize_rows(&(&a * z1 + &b * z2));
    let out = linear.where_self(&small, &arc);
    let same = z1.eq_tensor(z2).all_dim(1, true);
    let at_one = a.eq(1.0).logical_or(&same);
    let at_zero = a.eq(0.0);
    Ok(z1.where_self(&at_one, &z2.where_self(&at_zero, &out)))
}

/// Row-wise linear interpolation `alpha * z1 + (1 - alpha) * z2`.
pub fn lerp_rows(z1: &Tensor, z2: &Tensor, alpha: &Tensor) -> Tensor {
    let a = alpha.to_kind(Kind::Float).view([-1, 1]);
    &a * z1 + (a.ones_like() - &a) * z2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f32]) -> LatentCode {
        LatentCode::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_and_degenerate_pair() {
        let a = unit(&[1.0, 2.0, 3.0]);
        let b = unit(&[-1.0, 0.5, 2.0]);
        assert_eq!(slerp(&a, &b, 1.0).unwrap(), a);
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), b);
        for alpha in [0.0, 0.3, 0.5, 1.0] {
            assert_eq!(slerp(&a, &a, alpha).unwrap(), a);
        }
    }

    #[test]
    fn orthogonal_midpoint() {
        let e1 = LatentCode(vec![1.0, 0.0]);
        let e2 = LatentCode(vec![0.0, 1.0]);
        let m = slerp(&e1, &e2, 0.5).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((m.0[0] - h).abs() < 1e-7 && (m.0[1] - h).abs() < 1e-7);
    }

    #[test]
    fn antipodal_is_rejected_and_parallel_falls_back() {
        let a = LatentCode(vec![1.0, 0.0]);
        let b = LatentCode(vec![-1.0, 0.0]);
        assert!(matches!(slerp(&a, &b, 0.5), Err(Error::DegenerateLatent(_))));
        let c = unit(&[1.0, 1e-6]);
        let m = slerp(&a, &c, 0.5).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_vector_is_flagged() {
        assert!(LatentCode::normalized(vec![0.0; 4]).is_err());
    }

    #[test]
    fn tensor_version_matches_scalar() {
        let a = unit(&[0.3, -0.2, 0.9, 0.1]);
        let b = unit(&[-0.5, 0.4, 0.2, 0.7]);
        let z1 = Tensor::cat(&[a.to_tensor(), a.to_tensor(), a.to_tensor()], 0);
        let z2 = Tensor::cat(&[b.to_tensor(), a.to_tensor(), b.to_tensor()], 0);
        let alpha = Tensor::from_slice(&[0.3f32, 0.6, 1.0]);
        let rows = LatentCode::from_rows(&slerp_rows(&z1, &z2, &alpha).unwrap()).unwrap();
        let expect = slerp(&a, &b, 0.3f32 as f64).unwrap();
        for (x, y) in rows[0].0.iter().zip(&expect.0) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(rows[1], a);
        assert_eq!(rows[2], a);
    }

    #[test]
    fn tensor_slerp_gradients_are_finite_for_identical_rows() {
        let z = Tensor::from_slice(&[0.6f32, 0.8]).view([1, 2]).set_requires_grad(true);
        let out = slerp_rows(&z, &z.detach(), &Tensor::from_slice(&[0.5f32])).unwrap();
        out.sum(Kind::Float).backward();
        let g: Vec<f32> = Vec::try_from(z.grad().view(-1)).unwrap();
        assert_eq!(g, vec![1.0, 1.0]);
    }
}
