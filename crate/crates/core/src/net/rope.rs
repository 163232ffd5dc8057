use std::f64::consts::PI;

use crate::autodiff::{RotaryTable, Tensor};
use crate::real::Real;

use super::NetError;

const BASE: f64 = 10000.0;

/// Rotation table for 3D rotary embedding over the full width `d`: sub-space `k` holds the
/// planes `(6k, 6k+1)`, `(6k+2, 6k+3)`, `(6k+4, 6k+5)` rotated by `π·c_t·10000^(−2k/d)` for
/// the x, y and z coordinates in turn.
pub fn rope3d_table<T: Real>(coords: &[[f64; 3]], d: usize) -> Result<RotaryTable<T>, NetError> {
    if d == 0 || d % 6 != 0 {
        return Err(NetError::Dimension(format!("3D rotary width {d} is not a multiple of 6")));
    }
    let blocks = d / 6;
    let pairs: Vec<(usize, usize)> = (0..blocks)
        .flat_map(|k| (0..3).map(move |t| (6 * k + 2 * t, 6 * k + 2 * t + 1)))
        .collect();
    let freqs: Vec<f64> = (0..blocks).map(|k| PI * BASE.powf(-2.0 * k as f64 / d as f64)).collect();
    let mut angles = Vec::with_capacity(coords.len() * pairs.len());
    for c in coords {
        for f in &freqs {
            for t in c {
                angles.push(t * f);
            }
        }
    }
    Ok(RotaryTable::from_angles(pairs, coords.len(), &angles))
}

/// Axial 2D rotary table: within each head the first half of the dimensions is rotated by the
/// row coordinate and the second half by the column coordinate, pair `m` of a half using
/// frequency `10000^(−2m/(h/2))` for head width `h`.
pub fn rope2d_table<T: Real>(coords: &[[f64; 2]], d: usize, heads: usize) -> Result<RotaryTable<T>, NetError> {
    if heads == 0 || d % heads != 0 || (d / heads) % 4 != 0 {
        return Err(NetError::Dimension(format!(
            "2D rotary needs a head width divisible by 4, got d={d} with {heads} heads"
        )));
    }
    let h = d / heads;
    let half = h / 2;
    let freqs: Vec<f64> = (0..half / 2).map(|m| BASE.powf(-2.0 * m as f64 / half as f64)).collect();
    let mut pairs = Vec::with_capacity(d / 2);
    for head in 0..heads {
        for axis in 0..2 {
            for m in 0..half / 2 {
                let i = head * h + axis * half + 2 * m;
                pairs.push((i, i + 1));
            }
        }
    }
    let mut angles = Vec::with_capacity(coords.len() * pairs.len());
    for c in coords {
        for _ in 0..heads {
            for axis in c {
                for f in &freqs {
                    angles.push(axis * f);
                }
            }
        }
    }
    Ok(RotaryTable::from_angles(pairs, coords.len(), &angles))
}

/// Rotates every row of `vectors` by its 3D rotary matrix.
pub fn rope3d_apply<T: Real>(vectors: &Tensor<T>, coords: &[[f64; 3]]) -> Result<Tensor<T>, NetError> {
    check_rows(vectors, coords.len())?;
    let table = rope3d_table(coords, vectors.cols)?;
    let mut out = vectors.clone();
    table.apply(&mut out, false);
    Ok(out)
}

/// Rotates every row of `vectors` by its axial 2D rotary matrix.
pub fn rope2d_apply<T: Real>(vectors: &Tensor<T>, coords: &[[f64; 2]], heads: usize) -> Result<Tensor<T>, NetError> {
    check_rows(vectors, coords.len())?;
    let table = rope2d_table(coords, vectors.cols, heads)?;
    let mut out = vectors.clone();
    table.apply(&mut out, false);
    Ok(out)
}

fn check_rows<T: Real>(v: &Tensor<T>, n: usize) -> Result<(), NetError> {
    if v.rows != n {
        return Err(NetError::Dimension(format!("{} vectors but {n} coordinates", v.rows)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Tensor<f64> {
        Tensor::from_fn(1, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_coordinates_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = rand_vec(&mut rng, 36);
        assert_eq!(rope3d_apply(&v, &[[0.0; 3]]).unwrap(), v);
        assert_eq!(rope2d_apply(&v, &[[0.0; 2]], 3).unwrap(), v);
    }

    #[test]
    fn first_plane_turns_half_way_at_unit_x() {
        let v = Tensor::from_fn(1, 12, |_, c| c as f64 + 1.0);
        let out = rope3d_apply(&v, &[[1.0, 0.0, 0.0]]).unwrap();
        assert!((out.data[0] + 1.0).abs() < 1e-12);
        assert!((out.data[1] + 2.0).abs() < 1e-12);
        // The y and z planes of the first block are untouched.
        assert_eq!(&out.data[2..6], &v.data[2..6]);
    }

    #[test]
    fn norms_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v = rand_vec(&mut rng, 48);
            let c3 = [[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]];
            let c2 = [[rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)]];
            let n = dot(&v.data, &v.data).sqrt();
            let a = rope3d_apply(&v, &c3).unwrap();
            let b = rope2d_apply(&v, &c2, 4).unwrap();
            assert!((dot(&a.data, &a.data).sqrt() - n).abs() < 1e-12);
            assert!((dot(&b.data, &b.data).sqrt() - n).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_products_depend_on_relative_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (q, k) = (rand_vec(&mut rng, 24), rand_vec(&mut rng, 24));
            let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let c2: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let shift = |c: [f64; 3]| std::array::from_fn(|i| c[i] + s[i]);
            let a = dot(&rope3d_apply(&q, &[c1]).unwrap().data, &rope3d_apply(&k, &[c2]).unwrap().data);
            let b = dot(&rope3d_apply(&q, &[shift(c1)]).unwrap().data, &rope3d_apply(&k, &[shift(c2)]).unwrap().data);
            assert!((a - b).abs() < 1e-10);

            let p1 = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            let p2 = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let a = dot(&rope2d_apply(&q, &[p1], 2).unwrap().data, &rope2d_apply(&k, &[p2], 2).unwrap().data);
            let b = dot(
                &rope2d_apply(&q, &[[p1[0] + t[0], p1[1] + t[1]]], 2).unwrap().data,
                &rope2d_apply(&k, &[[p2[0] + t[0], p2[1] + t[1]]], 2).unwrap().data,
            );
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn two_d_halves_follow_rows_and_columns() {
        let v = Tensor::from_fn(1, 8, |_, _| 1.0);
        // Moving only the column must leave the row half of each head untouched.
        let out = rope2d_apply(&v, &[[0.0, 3.0]], 1).unwrap();
        assert_eq!(&out.data[..4], &v.data[..4]);
        assert_ne!(&out.data[4..], &v.data[4..]);
    }

    #[test]
    fn bad_widths_are_rejected() {
        let v = Tensor::<f64>::zeros(1, 8);
        assert!(matches!(rope3d_apply(&v, &[[0.0; 3]]), Err(NetError::Dimension(_))));
        let w = Tensor::<f64>::zeros(1, 12);
        assert!(matches!(rope2d_apply(&w, &[[0.0; 2]], 2), Err(NetError::Dimension(_))));
        assert!(rope3d_apply(&w, &[[0.0; 3], [0.0; 3]]).is_err());
    }
}
