//! Class prototypes, optimal-transport pseudo-labels and label-consistency verification.

mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use sinkhorn::{entropy, sinkhorn_from_scores, Assignment, SinkhornConfig};

use crate::data::ValidationSet;
use crate::error::{Error, Result};
use crate::nn::{argmax, dot, Model, Tensor, SPHERE_EPS};

/// One unit-norm row per class in sphere space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMatrix {
    pub rows: Tensor,
}

impl PrototypeMatrix {
    /// Normalizes each row to unit length.
    pub fn from_means(means: Tensor) -> Self {
        let mut rows = means;
        for i in 0..rows.rows() {
            let r = rows.row_mut(i);
            let norm = dot(r, r).sqrt() + SPHERE_EPS;
            r.iter_mut().for_each(|v| *v /= norm);
        }
        Self { rows }
    }

    pub fn classes(&self) -> usize {
        self.rows.rows()
    }

    /// `S · Cᵀ`, the cosine similarity of every sphere vector with every prototype.
    pub fn scores(&self, sphere: &Tensor) -> Result<Tensor> {
        if sphere.cols() != self.rows.cols() {
            return Err(Error::Shape(format!(
                "sphere dim {} != prototype dim {}",
                sphere.cols(),
                self.rows.cols()
            )));
        }
        let k = self.classes();
        let mut out = Vec::with_capacity(sphere.rows() * k);
        for s in sphere.iter_rows() {
            for c in self.rows.iter_rows() {
                out.push(dot(s, c));
            }
        }
        Tensor::matrix(sphere.rows(), k, out)
    }
}

/// Row `j` is the re-normalized mean sphere vector of the validation samples of class `j`.
pub fn build_prototypes(model: &Model, val: &ValidationSet) -> Result<PrototypeMatrix> {
    if let Some(j) = val.by_class.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("validation set has no samples of class {j}")));
    }
    let sphere = model.infer(&val.inputs())?.sphere;
    let d = sphere.cols();
    let mut means = Tensor::zeros(vec![val.classes(), d]);
    let mut row = 0;
    for (j, members) in val.by_class.iter().enumerate() {
        let m = means.row_mut(j);
        for _ in members {
            for (acc, v) in m.iter_mut().zip(sphere.row(row)) {
                *acc += v;
            }
            row += 1;
        }
        let count = members.len() as f64;
        m.iter_mut().for_each(|v| *v /= count);
    }
    Ok(PrototypeMatrix::from_means(means))
}

/// Entropic OT assignment of a batch of sphere vectors to the prototypes.
pub fn sinkhorn_assign(
    sphere: &Tensor,
    prototypes: &PrototypeMatrix,
    cfg: &SinkhornConfig,
    class_marginals: Option<&[f64]>,
) -> Result<Assignment> {
    sinkhorn_from_scores(&prototypes.scores(sphere)?, cfg, class_marginals)
}

/// Closest prototype by cosine similarity, without the transport constraint.
pub fn naive_cosine_label(sphere: &Tensor, prototypes: &PrototypeMatrix) -> Result<Vec<usize>> {
    Ok(prototypes.scores(sphere)?.iter_rows().map(argmax).collect())
}

/// Pseudo-labels from one assignment (row argmax) or from several augmented views (majority vote).
pub fn pseudo_label(q: &Tensor, votes: Option<&[Tensor]>) -> Vec<usize> {
    match votes {
        None => q.iter_rows().map(argmax).collect(),
        Some(views) => {
            let labels: Vec<Vec<usize>> = views.iter().map(|v| v.iter_rows().map(argmax).collect()).collect();
            majority_vote(&labels, q.cols())
        }
    }
}

/// Per-sample majority over views; ties go to the lowest class index.
///
/// `views[v][i]` is the label of sample `i` under view `v`.
pub fn majority_vote(views: &[Vec<usize>], classes: usize) -> Vec<usize> {
    let n = views.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; classes];
    (0..n)
        .map(|i| {
            counts.iter_mut().for_each(|c| *c = 0);
            for view in views {
                counts[view[i]] += 1;
            }
            let mut best = 0;
            for (j, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Partition of a batch into label-consistent and inconsistent positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencySplit {
    pub trusted: Vec<usize>,
    pub untrusted: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
}

pub fn lcv_split(pseudo_labels: &[usize], labels: &[usize]) -> Result<ConsistencySplit> {
    if pseudo_labels.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} pseudo-labels for {} labels",
            pseudo_labels.len(),
            labels.len()
        )));
    }
    let (trusted, untrusted) = (0..labels.len()).partition(|&i| pseudo_labels[i] == labels[i]);
    Ok(ConsistencySplit { trusted, untrusted, pseudo_labels: pseudo_labels.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = dot(v, v).sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn single_sample_prototype_equals_its_sphere_vector() {
        let model = Model::new(ModelConfig::new(16, 2), 3).unwrap();
        let val = ValidationSet {
            in_dim: 16,
            by_class: vec![vec![vec![0.2; 16]], vec![(0..16).map(|i| i as f64 / 16.0).collect()]],
        };
        let protos = build_prototypes(&model, &val).unwrap();
        let sphere = model.infer(&val.inputs()).unwrap().sphere;
        for j in 0..2 {
            for (a, b) in protos.rows.row(j).iter().zip(sphere.row(j)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let dup = ValidationSet { in_dim: 16, by_class: val.by_class.iter().map(|c| vec![c[0].clone(); 3]).collect() };
        let again = build_prototypes(&model, &dup).unwrap();
        for (a, b) in again.rows.data().iter().zip(protos.rows.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_class_is_an_error() {
        let model = Model::new(ModelConfig::new(16, 2), 3).unwrap();
        let val = ValidationSet { in_dim: 16, by_class: vec![vec![vec![0.5; 16]], vec![]] };
        assert!(matches!(build_prototypes(&model, &val), Err(Error::Data(_))));
    }

    #[test]
    fn pseudo_label_argmax_and_votes() {
        let q = Tensor::from_rows(&[vec![0.1, 0.7, 0.2]]).unwrap();
        assert_eq!(pseudo_label(&q, None), vec![1]);
        let views: Vec<Vec<usize>> = [2, 2, 0, 2, 1, 2].iter().map(|&c| vec![c]).collect();
        assert_eq!(majority_vote(&views, 3), vec![2]);
        let tie: Vec<Vec<usize>> = [2, 0, 2, 0, 2, 0].iter().map(|&c| vec![c]).collect();
        assert_eq!(majority_vote(&tie, 3), vec![0]);
    }

    #[test]
    fn lcv_split_cases() {
        let s = lcv_split(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert!(s.untrusted.is_empty());
        let s = lcv_split(&[1, 2, 0], &[0, 1, 2]).unwrap();
        assert!(s.trusted.is_empty());
        let s = lcv_split(&[0, 2, 2, 1], &[0, 1, 2, 3]).unwrap();
        assert_eq!(s.trusted, vec![0, 2]);
        assert_eq!(s.untrusted, vec![1, 3]);
        assert!(lcv_split(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn naive_cosine_cases() {
        let protos = PrototypeMatrix::from_means(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap());
        let s = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, -1.0], unit(&[0.3, 0.2]), unit(&[-0.9, 0.05])]).unwrap();
        assert_eq!(naive_cosine_label(&s, &protos).unwrap(), vec![0, 1, 0, 0]);
    }
}
