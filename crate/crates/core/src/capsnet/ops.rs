//! Routing kernels. Every kernel accumulates in a fixed index order so that
//! sequential and parallel execution give bit-identical results.

use super::provider::ScalarProvider;
use super::tensor::{same_extent, Axis, CapsuleTensor};
use super::CapsError;
use crate::par::{self, Execution};

const U_AXES: [Axis; 3] = [Axis::Batch, Axis::Low, Axis::InDim];
const W_AXES: [Axis; 4] = [Axis::Low, Axis::High, Axis::InDim, Axis::OutDim];
const UHAT_AXES: [Axis; 4] = [Axis::Batch, Axis::Low, Axis::High, Axis::OutDim];
const LOGIT_AXES: [Axis; 2] = [Axis::Low, Axis::High];
const CAPS_AXES: [Axis; 3] = [Axis::Batch, Axis::High, Axis::OutDim];

fn arith(op: &'static str) -> impl Fn(crate::arith::ArithError) -> CapsError {
    move |source| CapsError::Arith { op, source }
}

/// Dot product `Σ a[d]·b[d]` accumulated left to right.
fn dot<P: ScalarProvider + ?Sized>(p: &P, a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc = p.add(acc, p.mul(*x, *y));
    }
    acc
}

/// `û[k,i,j,·] = u[k,i,·] × W[i,j,·,·]`.
pub fn predict<P: ScalarProvider + ?Sized>(
    u: &CapsuleTensor,
    w: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    predict_with(Execution::default(), u, w, provider)
}

pub fn predict_with<P: ScalarProvider + ?Sized>(
    exec: Execution,
    u: &CapsuleTensor,
    w: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    u.expect_axes(&U_AXES)?;
    w.expect_axes(&W_AXES)?;
    let n_l = same_extent(Axis::Low, u, w)?;
    let c_l = same_extent(Axis::InDim, u, w)?;
    let n_b = u.extent(Axis::Batch).unwrap_or(0);
    let n_h = w.extent(Axis::High).unwrap_or(0);
    let c_h = w.extent(Axis::OutDim).unwrap_or(0);
    let mut out = CapsuleTensor::zeros(&[
        (Axis::Batch, n_b),
        (Axis::Low, n_l),
        (Axis::High, n_h),
        (Axis::OutDim, c_h),
    ]);
    let (ud, wd) = (u.data(), w.data());
    let row = n_h * c_h;
    if row > 0 {
        par::for_each_chunk_mut(exec, out.data_mut(), row, |ki, chunk| {
            let i = ki % n_l;
            let u_row = &ud[ki * c_l..(ki + 1) * c_l];
            for j in 0..n_h {
                let w_ij = &wd[(i * n_h + j) * c_l * c_h..(i * n_h + j + 1) * c_l * c_h];
                for d in 0..c_h {
                    let mut acc = 0.0f32;
                    for (e, ue) in u_row.iter().enumerate() {
                        acc = provider.add(acc, provider.mul(*ue, w_ij[e * c_h + d]));
                    }
                    chunk[j * c_h + d] = acc;
                }
            }
        });
    }
    out.check_finite()?;
    Ok(out)
}

/// Softmax of the routing logits over the high-capsule axis for each low
/// capsule.
pub fn routing_softmax<P: ScalarProvider + ?Sized>(
    b: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    b.expect_axes(&LOGIT_AXES)?;
    b.check_finite()?;
    let n_h = b.extent(Axis::High).unwrap_or(0);
    let mut out = b.clone();
    if n_h == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(n_h) {
        softmax_row(row, provider)?;
    }
    out.check_finite()?;
    Ok(out)
}

fn softmax_row<P: ScalarProvider + ?Sized>(row: &mut [f32], p: &P) -> Result<(), CapsError> {
    let shift = if p.stabilizes_softmax() {
        row.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    } else {
        0.0
    };
    let mut sum = 0.0f32;
    for x in row.iter_mut() {
        let arg = if p.stabilizes_softmax() { p.add(*x, -shift) } else { *x };
        *x = p.exp(arg).map_err(arith("exp"))?;
        sum = p.add(sum, *x);
    }
    for x in row.iter_mut() {
        *x = p.div(*x, sum).map_err(arith("div"))?;
    }
    Ok(())
}

/// `s[k,j,·] = Σ_i û[k,i,j,·]·c[i,j]`.
pub fn weighted_sum<P: ScalarProvider + ?Sized>(
    u_hat: &CapsuleTensor,
    c: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    weighted_sum_with(Execution::default(), u_hat, c, provider)
}

pub fn weighted_sum_with<P: ScalarProvider + ?Sized>(
    exec: Execution,
    u_hat: &CapsuleTensor,
    c: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    u_hat.expect_axes(&UHAT_AXES)?;
    c.expect_axes(&LOGIT_AXES)?;
    let n_l = same_extent(Axis::Low, u_hat, c)?;
    let n_h = same_extent(Axis::High, u_hat, c)?;
    let n_b = u_hat.extent(Axis::Batch).unwrap_or(0);
    let c_h = u_hat.extent(Axis::OutDim).unwrap_or(0);
    let mut out = CapsuleTensor::zeros(&[(Axis::Batch, n_b), (Axis::High, n_h), (Axis::OutDim, c_h)]);
    let (ud, cd) = (u_hat.data(), c.data());
    if c_h > 0 {
        par::for_each_chunk_mut(exec, out.data_mut(), c_h, |kj, chunk| {
            let (k, j) = (kj / n_h, kj % n_h);
            for i in 0..n_l {
                let coeff = cd[i * n_h + j];
                let base = ((k * n_l + i) * n_h + j) * c_h;
                for d in 0..c_h {
                    chunk[d] = provider.add(chunk[d], provider.mul(ud[base + d], coeff));
                }
            }
        });
    }
    out.check_finite()?;
    Ok(out)
}

/// Squash of every `s[k,j,·]`, evaluated as `s·n²·invsqrt(n²)/(1+n²)`;
/// the zero vector maps to itself.
pub fn squash<P: ScalarProvider + ?Sized>(s: &CapsuleTensor, provider: &P) -> Result<CapsuleTensor, CapsError> {
    s.expect_axes(&CAPS_AXES)?;
    s.check_finite()?;
    let c_h = s.extent(Axis::OutDim).unwrap_or(0);
    let mut out = s.clone();
    if c_h == 0 {
        return Ok(out);
    }
    for v in out.data_mut().chunks_mut(c_h) {
        squash_vec(v, provider)?;
    }
    out.check_finite()?;
    Ok(out)
}

/// In-place squash of a single capsule vector.
pub fn squash_vec<P: ScalarProvider + ?Sized>(v: &mut [f32], p: &P) -> Result<(), CapsError> {
    let n2 = dot(p, v, v);
    if n2 == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return Ok(());
    }
    let norm = p.mul(n2, p.inv_sqrt(n2).map_err(arith("inv_sqrt"))?);
    let scale = p.div(norm, p.add(1.0, n2)).map_err(arith("div"))?;
    for x in v.iter_mut() {
        *x = p.mul(*x, scale);
    }
    Ok(())
}

/// `b'[i,j] = Σ_k v[k,j,·]·û[k,i,j,·] + b[i,j]`.
pub fn agreement_update<P: ScalarProvider + ?Sized>(
    v: &CapsuleTensor,
    u_hat: &CapsuleTensor,
    b: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    agreement_update_with(Execution::default(), v, u_hat, b, provider)
}

pub fn agreement_update_with<P: ScalarProvider + ?Sized>(
    exec: Execution,
    v: &CapsuleTensor,
    u_hat: &CapsuleTensor,
    b: &CapsuleTensor,
    provider: &P,
) -> Result<CapsuleTensor, CapsError> {
    v.expect_axes(&CAPS_AXES)?;
    u_hat.expect_axes(&UHAT_AXES)?;
    b.expect_axes(&LOGIT_AXES)?;
    let n_b = same_extent(Axis::Batch, v, u_hat)?;
    let n_h = same_extent(Axis::High, v, u_hat)?;
    let c_h = same_extent(Axis::OutDim, v, u_hat)?;
    let n_l = same_extent(Axis::Low, u_hat, b)?;
    same_extent(Axis::High, u_hat, b)?;
    let mut out = b.clone();
    let (vd, ud) = (v.data(), u_hat.data());
    if n_h > 0 {
        par::for_each_chunk_mut(exec, out.data_mut(), n_h, |i, row| {
            for (j, bij) in row.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for k in 0..n_b {
                    let vk = &vd[(k * n_h + j) * c_h..(k * n_h + j + 1) * c_h];
                    let base = ((k * n_l + i) * n_h + j) * c_h;
                    acc = provider.add(acc, dot(provider, vk, &ud[base..base + c_h]));
                }
                *bij = provider.add(acc, *bij);
            }
        });
    }
    out.check_finite()?;
    Ok(out)
}
