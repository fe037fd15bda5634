//! First fusion stage: per-modality latent projection, decomposed Tucker
//! bilinear pooling, and the cross-modal contrastive regularizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, NORM_EPS};

/// Modality pairs compared by the contrastive loss, as indices into the
/// `[structural, visual, textual]` latent list.
pub const MODALITY_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub enabled: bool,
    /// Multiplier on the contrastive term of the joint loss.
    pub weight: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            weight: 1.0,
        }
    }
}

/// `ReLU(e · M)` for one entity.
pub fn project_latent(e: &[f64], projection: &Tensor) -> Result<Vec<f64>> {
    let (d_in, d_out) = projection.dims2()?;
    if e.len() != d_in {
        return Err(Error::shape("project_latent", &[e.len()], projection.shape()));
    }
    let mut out = vec![0.0; d_out];
    for (i, &x) in e.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(projection.row(i)) {
            *o += x * w;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// Decomposed bilinear fusion: `Π_k (ẽ_k · M_d^k)` elementwise.
///
/// With two latents this is the three-way product with the absent factor
/// replaced by an all-ones vector.
pub fn fuse(latents: &[&[f64]], cores: &[&Tensor]) -> Result<Vec<f64>> {
    if latents.len() != cores.len() || latents.is_empty() {
        return Err(Error::shape("fuse", &[latents.len()], &[cores.len()]));
    }
    let t_d = cores[0].dims2()?.1;
    let mut out = vec![1.0; t_d];
    for (z, core) in latents.iter().zip(cores) {
        let (t_k, width) = core.dims2()?;
        if z.len() != t_k || width != t_d {
            return Err(Error::shape("fuse", &[z.len(), t_d], core.shape()));
        }
        let mut proj = vec![0.0; t_d];
        for (i, &x) in z.iter().enumerate() {
            for (p, &w) in proj.iter_mut().zip(core.row(i)) {
                *p += x * w;
            }
        }
        out.iter_mut().zip(&proj).for_each(|(o, p)| *o *= p);
    }
    Ok(out)
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
    dot / (nu * nv)
}

/// Batch contrastive loss with negative sharing.
///
/// `views[k]` holds the `N × t` latents of modality `k`, row-aligned by
/// entity. With `d(u, v) = −cos(u, v)` each entity contributes
/// `1/(|P|·N) Σ_{(p,q)∈P} Σ_j [d(e_i^p, e_i^q) − d(e_i^p, e_j^q) + 2]`, and
/// the result is the mean over entities. Bounded in `[0, 4]`.
pub fn contrastive_loss(views: &[&Tensor], pairs: &[(usize, usize)]) -> Result<f64> {
    let n = check_views(views, pairs)?;
    let mut total = 0.0;
    for &(p, q) in pairs {
        let (vp, vq) = (views[p], views[q]);
        let mut pair_sum = 0.0;
        for i in 0..n {
            let pos = cosine(vp.row(i), vq.row(i));
            let shared: f64 = (0..n).map(|j| cosine(vp.row(i), vq.row(j))).sum();
            // Σ_j [−pos + cos(i, j) + 2]
            pair_sum += shared - n as f64 * pos + 2.0 * n as f64;
        }
        total += pair_sum;
    }
    Ok(total / (pairs.len() as f64 * (n * n) as f64))
}

fn check_views(views: &[&Tensor], pairs: &[(usize, usize)]) -> Result<usize> {
    if pairs.is_empty() {
        return Err(Error::Domain {
            op: "contrastive_loss",
            detail: "no modality pairs".into(),
        });
    }
    let first = views.first().ok_or_else(|| Error::Domain {
        op: "contrastive_loss",
        detail: "no views".into(),
    })?;
    let (n, t) = first.dims2()?;
    if n == 0 {
        return Err(Error::Domain {
            op: "contrastive_loss",
            detail: "empty batch (N = 0)".into(),
        });
    }
    for v in views {
        if v.dims2()? != (n, t) {
            return Err(Error::shape("contrastive_loss", first.shape(), v.shape()));
        }
    }
    if pairs.iter().any(|&(p, q)| p >= views.len() || q >= views.len()) {
        return Err(Error::Domain {
            op: "contrastive_loss",
            detail: "pair index outside the view list".into(),
        });
    }
    Ok(n)
}

/// `ReLU(F · M)` on the tape for a block of entity features `F`.
pub fn project_on_tape(tape: &mut Tape, features: Var, projection: Var) -> Result<Var> {
    let z = tape.matmul(features, projection)?;
    tape.relu(z)
}

/// Row-wise decomposed fusion on the tape: `Π_k (Z_k · M_d^k)`.
pub fn fuse_on_tape(tape: &mut Tape, latents: &[Var], cores: &[Var]) -> Result<Var> {
    if latents.len() != cores.len() || latents.is_empty() {
        return Err(Error::shape("fuse", &[latents.len()], &[cores.len()]));
    }
    let mut acc = tape.matmul(latents[0], cores[0])?;
    for (&z, &c) in latents[1..].iter().zip(&cores[1..]) {
        let p = tape.matmul(z, c)?;
        acc = tape.mul(acc, p)?;
    }
    Ok(acc)
}

/// Differentiable [`contrastive_loss`].
///
/// Per pair the double sum reduces to
/// `mean_{i,j} cos(p_i, q_j) − mean_i cos(p_i, q_i) + 2`.
pub fn contrastive_on_tape(tape: &mut Tape, views: &[Var], pairs: &[(usize, usize)]) -> Result<Var> {
    {
        let vals: Vec<&Tensor> = views.iter().map(|&v| tape.value(v)).collect();
        check_views(&vals, pairs)?;
    }
    let normalized: Vec<Var> = views.iter().map(|&v| tape.normalize_rows(v)).collect::<Result<_>>()?;
    let mut total: Option<Var> = None;
    for &(p, q) in pairs {
        let diag = tape.cosine_rows(views[p], views[q])?;
        let diag_mean = tape.mean(diag)?;
        let qt = tape.transpose(normalized[q])?;
        let all = tape.matmul(normalized[p], qt)?;
        let all_mean = tape.mean(all)?;
        let d = tape.sub(all_mean, diag_mean)?;
        let term = tape.add_scalar(d, 2.0)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let total = total.expect("pairs checked non-empty");
    tape.scale(total, 1.0 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_projects_to_zero() {
        let m = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        assert_eq!(project_latent(&[0.0, 0.0], &m).unwrap(), vec![0.0, 0.0]);
        assert_eq!(project_latent(&[-1.0, 2.0], &Tensor::eye(2)).unwrap(), vec![0.0, 2.0]);
        assert!(project_latent(&[1.0], &m).is_err());
    }

    #[test]
    fn scalar_fuse() {
        let one = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let out = fuse(&[&[2.0], &[3.0], &[4.0]], &[&one, &one, &one]).unwrap();
        assert_eq!(out, vec![24.0]);
    }

    #[test]
    fn zero_latent_annihilates() {
        let c = Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.7]]).unwrap();
        let out = fuse(&[&[1.0, 2.0], &[0.0, 0.0], &[5.0, -1.0]], &[&c, &c, &c]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_give_two() {
        let v = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let l = contrastive_loss(&[&v, &v, &v], &MODALITY_PAIRS).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_entity_gives_two() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.2, 0.9]]).unwrap();
        let c = Tensor::from_rows(&[vec![-1.0, 0.4]]).unwrap();
        let l = contrastive_loss(&[&a, &b, &c], &MODALITY_PAIRS).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let e = Tensor::zeros(&[0, 3]);
        assert!(contrastive_loss(&[&e, &e, &e], &MODALITY_PAIRS).is_err());
    }
}
