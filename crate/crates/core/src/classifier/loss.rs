use ndarray::{Array2, ArrayView1, Axis};

use super::ContrastivePair;

/// Squared cosine-similarity loss of a pair batch under a linear projection.
///
/// `projection` is `k × d`, `embeddings` is `n × d` with one row per training
/// example. Returns the batch-mean of `(cos(P·a, P·b) − label)²` and its
/// gradient with respect to `projection`. A pair whose projected side is the
/// zero vector has cosine 0 and contributes no gradient.
pub fn contrastive_loss(
    projection: &Array2<f64>,
    pairs: &[ContrastivePair],
    embeddings: &Array2<f64>,
) -> (f64, Array2<f64>) {
    assert_eq!(
        projection.ncols(),
        embeddings.ncols(),
        "projection input dim must match embedding dim"
    );
    let mut grad = Array2::zeros(projection.raw_dim());
    if pairs.is_empty() {
        return (0.0, grad);
    }
    let batch = pairs.len() as f64;
    let anchors: Vec<usize> = pairs.iter().map(|p| p.anchor_index).collect();
    let others: Vec<usize> = pairs.iter().map(|p| p.other_index).collect();
    let a = embeddings.select(Axis(0), &anchors);
    let b = embeddings.select(Axis(0), &others);
    let u = a.dot(&projection.t());
    let v = b.dot(&projection.t());

    let mut gu = Array2::zeros(u.raw_dim());
    let mut gv = Array2::zeros(v.raw_dim());
    let mut loss = 0.0;
    for (row, pair) in pairs.iter().enumerate() {
        let (ur, vr) = (u.row(row), v.row(row));
        let (nu, nv) = (norm(ur), norm(vr));
        if nu == 0.0 || nv == 0.0 {
            loss += pair.label * pair.label;
            continue;
        }
        let cos = ur.dot(&vr) / (nu * nv);
        let resid = cos - pair.label;
        loss += resid * resid;
        let scale = 2.0 * resid / batch;
        // d cos / du = v/(|u||v|) − cos·u/|u|², symmetric for v.
        gu.row_mut(row)
            .assign(&((&vr / (nu * nv) - &ur * (cos / (nu * nu))) * scale));
        gv.row_mut(row)
            .assign(&((&ur / (nu * nv) - &vr * (cos / (nv * nv))) * scale));
    }
    grad += &gu.t().dot(&a);
    grad += &gv.t().dot(&b);
    (loss / batch, grad)
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(a: usize, b: usize, label: f64) -> ContrastivePair {
        ContrastivePair { anchor_index: a, other_index: b, label }
    }

    #[test]
    fn identical_positive_pair_has_zero_loss() {
        let p = array![[1.0, 2.0, 0.5], [-0.3, 0.1, 1.0]];
        let e = array![[0.2, 0.4, 0.9], [0.2, 0.4, 0.9]];
        let (loss, _) = contrastive_loss(&p, &[pair(0, 1, 1.0)], &e);
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_negative_pair_has_zero_loss() {
        let p = Array2::eye(3);
        let e = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (loss, grad) = contrastive_loss(&p, &[pair(0, 1, 0.0)], &e);
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn zero_image_counts_as_cosine_zero() {
        let p = array![[1.0, 0.0]];
        let e = array![[0.0, 1.0], [1.0, 0.0]];
        let (loss, grad) = contrastive_loss(&p, &[pair(0, 1, 1.0)], &e);
        assert_eq!(loss, 1.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, d, n) = (4, 6, 5);
        let e = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let p = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
        let pairs = vec![pair(0, 1, 1.0), pair(2, 3, 0.0), pair(4, 0, 1.0), pair(1, 3, 0.0)];
        let (_, grad) = contrastive_loss(&p, &pairs, &e);
        let h = 1e-6;
        for i in 0..k {
            for j in 0..d {
                let mut plus = p.clone();
                plus[[i, j]] += h;
                let mut minus = p.clone();
                minus[[i, j]] -= h;
                let fd = (contrastive_loss(&plus, &pairs, &e).0 - contrastive_loss(&minus, &pairs, &e).0)
                    / (2.0 * h);
                assert!((fd - grad[[i, j]]).abs() <= 1e-6 + 1e-4 * fd.abs(), "{fd} vs {}", grad[[i, j]]);
            }
        }
    }

    #[test]
    fn empty_batch() {
        let p = Array2::<f64>::ones((2, 3));
        let e = Array2::<f64>::ones((1, 3));
        let (loss, grad) = contrastive_loss(&p, &[], &e);
        assert_eq!(loss, 0.0);
        assert_eq!(grad.dim(), (2, 3));
    }
}
