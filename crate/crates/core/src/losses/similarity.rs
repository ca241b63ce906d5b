use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::RealArray;

/// Tolerance on unit norms for embeddings and proxies.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Unit-norm sample embeddings `f` (N×d) with labels and unit-norm class
/// proxies `v` (c×d).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    f: RealArray,
    y: Vec<usize>,
    v: RealArray,
}

fn check_unit_rows(what: &'static str, a: &RealArray) -> Result<()> {
    for (row, norm) in a.row_norms().into_iter().enumerate() {
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm { what, row, norm });
        }
    }
    Ok(())
}

pub(crate) fn check_labels(y: &[usize], classes: usize) -> Result<()> {
    match y.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

fn normalize_rows(a: &RealArray) -> Result<RealArray> {
    let (r, c) = a.dims2();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = a.row(i);
        let n = math::norm(row).max(crate::tensor::NORM_EPS);
        data.extend(row.iter().map(|x| x / n));
    }
    Ok(RealArray::matrix(r, c, data)?)
}

impl EmbeddingBatch {
    pub fn new(f: RealArray, y: Vec<usize>, v: RealArray) -> Result<Self> {
        if f.rows() != y.len() {
            return Err(invalid("labels", "one label per embedding row is required"));
        }
        if f.cols() != v.cols() {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "embedding_batch",
                lhs: f.shape().to_vec(),
                rhs: v.shape().to_vec(),
            }
            .into());
        }
        check_unit_rows("embeddings", &f)?;
        check_unit_rows("proxies", &v)?;
        check_labels(&y, v.rows())?;
        Ok(Self { f, y, v })
    }

    /// Normalizes raw embeddings and proxy weights onto the unit sphere.
    pub fn from_raw(features: &RealArray, y: Vec<usize>, weights: &RealArray) -> Result<Self> {
        Self::new(normalize_rows(features)?, y, normalize_rows(weights)?)
    }

    pub fn embeddings(&self) -> &RealArray {
        &self.f
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn proxies(&self) -> &RealArray {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.v.rows()
    }

    /// `f_iᵀ v_{y_i}` for every sample.
    pub fn positive_similarities(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| math::dot(self.f.row(i), self.v.row(self.y[i])))
            .collect()
    }
}

/// Boolean `N×N` matrix of valid negatives `𝒩(i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeMask {
    n: usize,
    bits: Vec<bool>,
}

impl NegativeMask {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                bits.push(f(i, j));
            }
        }
        Self { n, bits }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    /// `|𝒩(i)|`.
    pub fn count(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    /// The mask as a 0/1 array, for use as a graph constant.
    pub fn to_array(&self) -> RealArray {
        let data = self
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        RealArray::matrix(self.n, self.n, data).expect("mask dims are positive")
    }
}

/// Negatives for each anchor: different label, not itself, and kept by an
/// independent Bernoulli(1 − `drop_p`) draw per ordered pair.
///
/// With `drop_p == 0` no randomness is consumed.
pub fn false_negative_mask<R: Rng + ?Sized>(
    y: &[usize],
    drop_p: f64,
    rng: &mut R,
) -> Result<NegativeMask> {
    if !(0.0..=1.0).contains(&drop_p) {
        return Err(invalid("mask_drop_p", "must lie in [0, 1]"));
    }
    let n = y.len();
    let mut bits = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let candidate = i != j && y[i] != y[j];
            let kept = if drop_p == 0.0 {
                true
            } else if drop_p == 1.0 {
                false
            } else {
                rng.random::<f64>() >= drop_p
            };
            bits.push(candidate && kept);
        }
    }
    Ok(NegativeMask { n, bits })
}

/// Exact label-based negatives with no random dropping.
pub fn exact_negative_mask(y: &[usize]) -> NegativeMask {
    NegativeMask::from_fn(y.len(), |i, j| i != j && y[i] != y[j])
}

/// Similarities shared by every conditioning loss and its analytic
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBundle {
    s_pos: Vec<f64>,
    s_neg: RealArray,
    mask: NegativeMask,
    labels: Vec<usize>,
}

const SIM_TOL: f64 = 1e-12;

impl SimilarityBundle {
    pub fn from_batch(batch: &EmbeddingBatch, mask: NegativeMask) -> Result<Self> {
        let f = batch.embeddings();
        let mut s_neg = f.matmul(&f.transpose())?.into_data();
        let n = batch.len();
        // Symmetrize and clip rounding excursions outside [-1, 1].
        for i in 0..n {
            for j in i..n {
                let s = (0.5 * (s_neg[i * n + j] + s_neg[j * n + i])).clamp(-1.0, 1.0);
                s_neg[i * n + j] = s;
                s_neg[j * n + i] = s;
            }
        }
        let s_pos = batch
            .positive_similarities()
            .into_iter()
            .map(|s| s.clamp(-1.0, 1.0))
            .collect();
        Self::new(
            s_pos,
            RealArray::matrix(n, n, s_neg)?,
            mask,
            batch.labels().to_vec(),
        )
    }

    /// Builds a bundle directly from similarity values, validating every
    /// invariant.
    pub fn new(
        s_pos: Vec<f64>,
        s_neg: RealArray,
        mask: NegativeMask,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = s_pos.len();
        if n == 0 {
            return Err(Error::EmptyInput("similarity bundle"));
        }
        if s_neg.shape() != [n, n] || mask.size() != n || labels.len() != n {
            return Err(invalid("similarity bundle", "inconsistent batch sizes"));
        }
        let in_range = |s: f64| (-1.0 - SIM_TOL..=1.0 + SIM_TOL).contains(&s);
        if !s_pos.iter().all(|&s| in_range(s)) || !s_neg.data().iter().all(|&s| in_range(s)) {
            return Err(invalid("similarity", "values must lie in [-1, 1]"));
        }
        for i in 0..n {
            if mask.get(i, i) {
                return Err(invalid("negative mask", "diagonal must be false"));
            }
            for j in 0..n {
                if (s_neg.get(i, j) - s_neg.get(j, i)).abs() > SIM_TOL {
                    return Err(invalid("pairwise similarities", "must be symmetric"));
                }
                if mask.get(i, j) && labels[i] == labels[j] {
                    return Err(invalid("negative mask", "marks a same-label pair"));
                }
            }
        }
        Ok(Self {
            s_pos,
            s_neg,
            mask,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.s_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_pos.is_empty()
    }

    pub fn s_pos(&self) -> &[f64] {
        &self.s_pos
    }

    pub fn s_neg(&self) -> &RealArray {
        &self.s_neg
    }

    pub fn mask(&self) -> &NegativeMask {
        &self.mask
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Same bundle with a different negative mask.
    pub fn with_mask(&self, mask: NegativeMask) -> Result<Self> {
        Self::new(
            self.s_pos.clone(),
            self.s_neg.clone(),
            mask,
            self.labels.clone(),
        )
    }
}

impl EmbeddingBatch {
    /// Random batch with Gaussian-direction embeddings and proxies on the
    /// unit sphere and uniform labels.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        d: usize,
        classes: usize,
    ) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let mut draw = |rows: usize| -> Result<RealArray> {
            let data: Vec<f64> = (0..rows * d)
                .map(|_| StandardNormal.sample(&mut *rng))
                .collect();
            normalize_rows(&RealArray::matrix(rows, d, data)?)
        };
        let f = draw(n)?;
        let v = draw(classes)?;
        let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Self::new(f, y, v)
    }
}

/// Symmetric similarity matrix with entries drawn uniformly from `[lo, hi]`
/// and a unit diagonal.
pub fn random_pairwise<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> RealArray {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = rng.random_range(lo..=hi);
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    RealArray::matrix(n, n, data).expect("finite similarities")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(mask: &NegativeMask) -> Vec<Vec<bool>> {
        (0..mask.size()).map(|i| mask.row(i).to_vec()).collect()
    }

    #[test]
    fn mask_definition_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = false_negative_mask(&[0, 0, 1], 0.0, &mut rng).unwrap();
        assert_eq!(
            rows(&m),
            vec![
                vec![false, false, true],
                vec![false, false, true],
                vec![true, true, false]
            ]
        );
    }

    #[test]
    fn full_drop_masks_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = false_negative_mask(&[0, 1, 2], 1.0, &mut rng).unwrap();
        assert!((0..3).all(|i| m.count(i) == 0));
    }

    #[test]
    fn exact_mask_matches_pair_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let y: Vec<usize> = (0..16).map(|_| rng.random_range(0..4)).collect();
            let m = false_negative_mask(&y, 0.0, &mut rng).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    let expected = if i == j { false } else { y[i] != y[j] };
                    assert_eq!(m.get(i, j), expected);
                }
            }
        }
    }

    #[test]
    fn partial_drop_keeps_about_the_right_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y: Vec<usize> = (0..200).map(|i| i % 10).collect();
        let m = false_negative_mask(&y, 0.3, &mut rng).unwrap();
        let exact = exact_negative_mask(&y);
        let total: usize = (0..200).map(|i| exact.count(i)).sum();
        let kept: usize = (0..200).map(|i| m.count(i)).sum();
        let frac = kept as f64 / total as f64;
        assert!((frac - 0.7).abs() < 0.01, "{frac}");
        for i in 0..200 {
            for j in 0..200 {
                assert!(!m.get(i, j) || exact.get(i, j));
            }
        }
    }

    #[test]
    fn rejects_bad_drop_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(false_negative_mask(&[0, 1], 1.5, &mut rng).is_err());
    }

    #[test]
    fn batch_validation() {
        let f = RealArray::from_rows(&[&[1.0, 0.0]]).unwrap();
        let v = RealArray::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert!(EmbeddingBatch::new(f.clone(), vec![1], v.clone()).is_ok());
        assert_eq!(
            EmbeddingBatch::new(f.clone(), vec![2], v.clone()),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        );
        let unnormalized = RealArray::from_rows(&[&[2.0, 0.0]]).unwrap();
        assert!(matches!(
            EmbeddingBatch::new(unnormalized.clone(), vec![0], v.clone()),
            Err(Error::NotUnitNorm { .. })
        ));
        let b = EmbeddingBatch::from_raw(&unnormalized, vec![0], &v).unwrap();
        assert_eq!(b.embeddings().data(), &[1.0, 0.0]);
    }

    #[test]
    fn bundle_invariants_hold_for_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let f = RealArray::matrix(8, 4, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let v = RealArray::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
            let batch = EmbeddingBatch::from_raw(&f, y.clone(), &v).unwrap();
            let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(&y)).unwrap();
            let s = bundle.s_neg();
            for i in 0..8 {
                assert!(!bundle.mask().get(i, i));
                for j in 0..8 {
                    assert_eq!(s.get(i, j), s.get(j, i));
                }
            }
        }
    }

    #[test]
    fn bundle_rejects_same_label_negative() {
        let mask = NegativeMask::from_fn(2, |i, j| i != j);
        let s_neg = RealArray::from_rows(&[&[1.0, 0.5], &[0.5, 1.0]]).unwrap();
        assert!(SimilarityBundle::new(vec![0.5, 0.5], s_neg, mask, vec![0, 0]).is_err());
    }
}
