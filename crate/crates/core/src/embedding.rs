//! Embedding-space back end shared by every identifier.
//!
//! Raw window embeddings go through a fixed pipeline before they are
//! compared against anything: subtract the global mean, project with an
//! LDA matrix, and scale to unit length. Speaker profiles live in the same
//! processed space and are built by averaging processed windows.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
const NORM_FLOOR: f64 = 1e-12;

/// Relative shrinkage added to the within-class scatter diagonal.
pub const LDA_SHRINKAGE: f64 = 1e-4;

/// A fixed-dimension speech embedding for one analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have positive dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {i}")));
        }
        Ok(Embedding(values))
    }

    /// Builds an embedding without validation. Callers guarantee finiteness.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// An enrolled speaker identity in the processed embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub vector: Embedding,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `v` to unit Euclidean norm.
pub fn length_normalize(v: &Embedding) -> Result<Embedding> {
    let norm = v.norm();
    if !(norm > NORM_FLOOR) {
        return Err(Error::DegenerateEmbedding(
            "cannot length-normalize a zero vector".into(),
        ));
    }
    Ok(Embedding(v.0.iter().map(|x| x / norm).collect()))
}

/// Returns `v - mean`.
pub fn mean_normalize(v: &Embedding, mean: &[f64]) -> Result<Embedding> {
    Error::check_dim(mean.len(), v.dim())?;
    Ok(Embedding(
        v.0.iter().zip(mean).map(|(x, m)| x - m).collect(),
    ))
}

/// Cosine distance `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    Error::check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if !(na > NORM_FLOOR && nb > NORM_FLOOR) {
        return Err(Error::DegenerateEmbedding(
            "cosine distance of a zero vector".into(),
        ));
    }
    let cos = (dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Profile = unit-length arithmetic mean of the speaker's processed windows.
pub fn estimate_profile(speaker_id: &str, windows: &[Embedding]) -> Result<SpeakerProfile> {
    let first = windows
        .first()
        .ok_or_else(|| Error::invalid(format!("no windows for speaker {speaker_id}")))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for w in windows {
        Error::check_dim(dim, w.dim())?;
        for (s, x) in sum.iter_mut().zip(&w.0) {
            *s += x;
        }
    }
    let n = windows.len() as f64;
    let mean = Embedding(sum.into_iter().map(|s| s / n).collect());
    let vector = length_normalize(&mean).map_err(|_| {
        Error::DegenerateEmbedding(format!("mean of windows for {speaker_id} is zero"))
    })?;
    Ok(SpeakerProfile {
        speaker_id: speaker_id.to_string(),
        vector,
    })
}

/// Mean-subtraction plus linear projection fitted with LDA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub d_in: usize,
    pub d_out: usize,
    pub mean: Vec<f64>,
    /// Row-major `d_out × d_in` projection matrix.
    pub lda: Vec<f64>,
}

impl ProjectionModel {
    /// Zero mean and identity projection.
    pub fn identity(dim: usize) -> Self {
        let mut lda = vec![0.0; dim * dim];
        for i in 0..dim {
            lda[i * dim + i] = 1.0;
        }
        ProjectionModel {
            d_in: dim,
            d_out: dim,
            mean: vec![0.0; dim],
            lda,
        }
    }

    pub fn new(mean: Vec<f64>, lda: Vec<Vec<f64>>) -> Result<Self> {
        let d_in = mean.len();
        let d_out = lda.len();
        if d_in == 0 || d_out == 0 || d_out > d_in {
            return Err(Error::invalid(format!(
                "projection must satisfy 0 < d_out <= d_in, got {d_out} x {d_in}"
            )));
        }
        for row in &lda {
            Error::check_dim(d_in, row.len())?;
        }
        Ok(ProjectionModel {
            d_in,
            d_out,
            mean,
            lda: lda.into_iter().flatten().collect(),
        })
    }

    /// Row `i` of the projection matrix.
    pub fn direction(&self, i: usize) -> &[f64] {
        &self.lda[i * self.d_in..(i + 1) * self.d_in]
    }
}

/// Mean-subtract, project, length-normalize.
pub fn apply_projection(p: &ProjectionModel, v: &Embedding) -> Result<Embedding> {
    let centered = mean_normalize(v, &p.mean)?;
    let projected: Vec<f64> = (0..p.d_out)
        .map(|i| dot(p.direction(i), centered.as_slice()))
        .collect();
    length_normalize(&Embedding(projected))
}

/// Fits the back-end projection on labeled embeddings.
///
/// Directions are generalized eigenvectors of the between-class scatter
/// against the shrunk within-class scatter `S_W + eps*I`, with
/// `eps = LDA_SHRINKAGE * trace(S_W) / d_in`. When `d_out` exceeds the
/// number of discriminant directions (`#classes - 1`) the remainder is
/// filled with principal directions of the total scatter orthogonal to the
/// discriminant span, each scaled to unit within-class variance.
pub fn fit_lda(data: &[(Embedding, String)], d_out: usize) -> Result<ProjectionModel> {
    let d_in = data
        .first()
        .map(|(e, _)| e.dim())
        .ok_or_else(|| Error::invalid("no training data for LDA"))?;
    if d_out == 0 || d_out > d_in {
        return Err(Error::invalid(format!(
            "d_out must be in [1, {d_in}], got {d_out}"
        )));
    }

    let mut classes: BTreeMap<&str, Vec<&Embedding>> = BTreeMap::new();
    for (e, spk) in data {
        Error::check_dim(d_in, e.dim())?;
        classes.entry(spk.as_str()).or_default().push(e);
    }
    classes.retain(|_, members| members.len() >= 2);
    if classes.len() < 2 {
        return Err(Error::invalid(
            "LDA needs at least two speakers with two or more samples each",
        ));
    }

    let n_total: usize = classes.values().map(Vec::len).sum();
    let mut global = DVector::<f64>::zeros(d_in);
    for members in classes.values() {
        for e in members {
            global += DVector::from_column_slice(e.as_slice());
        }
    }
    global /= n_total as f64;

    let mut s_w = DMatrix::<f64>::zeros(d_in, d_in);
    let mut s_b = DMatrix::<f64>::zeros(d_in, d_in);
    for members in classes.values() {
        let mut mu = DVector::<f64>::zeros(d_in);
        for e in members {
            mu += DVector::from_column_slice(e.as_slice());
        }
        mu /= members.len() as f64;
        for e in members {
            let c = DVector::from_column_slice(e.as_slice()) - &mu;
            s_w.ger(1.0, &c, &c, 1.0);
        }
        let dm = &mu - &global;
        s_b.ger(members.len() as f64, &dm, &dm, 1.0);
    }
    s_w /= n_total as f64;
    s_b /= n_total as f64;

    let eps = LDA_SHRINKAGE * s_w.trace() / d_in as f64;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Singular("within-class scatter is zero".into()));
    }
    let mut reg = s_w.clone();
    for i in 0..d_in {
        reg[(i, i)] += eps;
    }
    let chol = reg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("regularized within-class scatter".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Singular("cholesky factor".into()))?;

    let whitened_b = &l_inv * &s_b * l_inv.transpose();
    let whitened_b = (&whitened_b + whitened_b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(whitened_b);
    let order = sorted_desc(eig.eigenvalues.as_slice());

    let n_lda = d_out.min(classes.len() - 1);
    let mut directions: Vec<DVector<f64>> = order[..n_lda]
        .iter()
        .map(|&j| {
            let u = eig.eigenvectors.column(j).into_owned();
            canonical_sign(l_inv.transpose() * u)
        })
        .collect();

    if d_out > n_lda {
        let s_t = &s_w + &s_b;
        let basis = DMatrix::from_columns(&directions);
        let gram = basis.transpose() * &basis;
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Singular("discriminant directions".into()))?;
        let proj = &basis * gram_inv * basis.transpose();
        let comp = DMatrix::<f64>::identity(d_in, d_in) - proj;
        let restricted = &comp * s_t * comp.transpose();
        let restricted = (&restricted + restricted.transpose()) * 0.5;
        let eig = SymmetricEigen::new(restricted);
        let order = sorted_desc(eig.eigenvalues.as_slice());
        for &j in order.iter().take(d_out - n_lda) {
            let v = &comp * eig.eigenvectors.column(j);
            let scale = (v.transpose() * &reg * &v)[(0, 0)].sqrt();
            if !(scale > NORM_FLOOR) {
                return Err(Error::Singular(
                    "fallback direction has zero variance".into(),
                ));
            }
            directions.push(canonical_sign(v / scale));
        }
    }

    Ok(ProjectionModel {
        d_in,
        d_out,
        mean: global.as_slice().to_vec(),
        lda: directions.iter().flat_map(|d| d.iter().copied()).collect(),
    })
}

fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Flips `v` so its largest-magnitude entry is positive.
fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn length_normalize_examples() {
        let out = length_normalize(&e(&[3.0, 4.0])).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((out.as_slice()[1] - 0.8).abs() < 1e-12);
        assert_eq!(length_normalize(&e(&[1.0, 0.0])).unwrap(), e(&[1.0, 0.0]));
        assert!(matches!(
            length_normalize(&e(&[0.0, 0.0])),
            Err(Error::DegenerateEmbedding(_))
        ));
    }

    #[test]
    fn mean_normalize_examples() {
        assert_eq!(
            mean_normalize(&e(&[2.0, 2.0]), &[1.0, 1.0]).unwrap(),
            e(&[1.0, 1.0])
        );
        assert_eq!(
            mean_normalize(&e(&[0.3, -2.0]), &[0.3, -2.0]).unwrap(),
            e(&[0.0, 0.0])
        );
        assert_eq!(
            mean_normalize(&e(&[1.0, 2.0, 3.0]), &[0.0; 3]).unwrap(),
            e(&[1.0, 2.0, 3.0])
        );
        assert!(matches!(
            mean_normalize(&e(&[1.0, 2.0]), &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_distance_examples() {
        let d = |a: &[f64], b: &[f64]| cosine_distance(&e(a), &e(b)).unwrap();
        assert_eq!(d(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((d(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((d(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-12);
        assert!(cosine_distance(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn profile_examples() {
        let w = e(&[0.6, 0.8]);
        assert_eq!(estimate_profile("a", &[w.clone()]).unwrap().vector, w);

        let p = estimate_profile("b", &[e(&[1.0, 0.0]), e(&[0.0, 1.0])]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.vector.as_slice()[0] - h).abs() < 1e-12);
        assert!((p.vector.as_slice()[1] - h).abs() < 1e-12);

        assert!(estimate_profile("c", &[e(&[1.0, 0.0]), e(&[-1.0, 0.0])]).is_err());
        assert!(estimate_profile("d", &[]).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = ProjectionModel::identity(2);
        let out = apply_projection(&p, &e(&[3.0, 4.0])).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-12);

        let p = ProjectionModel::new(vec![0.0, 0.0], vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(apply_projection(&p, &e(&[2.0, 5.0])).unwrap(), e(&[1.0]));
        assert!(apply_projection(&p, &e(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn lda_rejects_bad_inputs() {
        let one_class = vec![
            (e(&[1.0, 0.0]), "a".to_string()),
            (e(&[0.0, 1.0]), "a".to_string()),
        ];
        assert!(fit_lda(&one_class, 1).is_err());
        let two = vec![
            (e(&[1.0, 0.0]), "a".to_string()),
            (e(&[1.1, 0.2]), "a".to_string()),
            (e(&[0.0, 1.0]), "b".to_string()),
            (e(&[0.1, 1.2]), "b".to_string()),
        ];
        assert!(fit_lda(&two, 3).is_err());
        assert!(fit_lda(&two, 0).is_err());
        assert_eq!(fit_lda(&two, 1).unwrap(), fit_lda(&two, 1).unwrap());
    }
}
