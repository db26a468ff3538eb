//! Spectral layout of the class confusion graph.
//!
//! Rows of the confusion matrix are first divided by the class support so
//! large classes do not dominate the affinity. Each coordinate is a Laplacian
//! eigenvector divided by the square root of its eigenvalue; without that
//! scaling, orthonormal eigenvectors of a three-node graph put all nodes at
//! the same mutual distance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ConfusionMatrix;
use crate::error::{Error, Result};

/// Horizontal distance between the layouts of disconnected components.
pub const COMPONENT_SPACING: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub classes: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// Connected component of each class, numbered by smallest member.
    pub component: Vec<usize>,
    /// More than one component: coordinates are only comparable inside a
    /// component.
    pub disconnected: bool,
}

impl Layout {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,x,y,component\n");
        for ((c, p), k) in self.classes.iter().zip(&self.coords).zip(&self.component) {
            s.push_str(&format!("{c},{},{},{k}\n", p[0], p[1]));
        }
        s
    }
}

fn affinity(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    let n = cm.len();
    let rates: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let s = cm.support(i) as f64;
            cm.counts[i].iter().map(|&v| if s > 0.0 { v as f64 / s } else { 0.0 }).collect()
        })
        .collect();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 0.5 * (rates[i][j] + rates[j][i]) }).collect())
        .collect()
}

fn components(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if a[i][j] > 0.0 && comp[j] == usize::MAX {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Flips `v` so its largest-magnitude entry is positive (first one on ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() * (1.0 + 1e-9) {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn layout_component(a: &[Vec<f64>], members: &[usize]) -> Vec<[f64; 2]> {
    let m = members.len();
    if m == 1 {
        return vec![[0.0, 0.0]];
    }
    let lap = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            members.iter().map(|&k| a[members[r]][k]).sum()
        } else {
            -a[members[r]][members[c]]
        }
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l));
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        if lambda <= 1e-12 * top.max(1e-300) || axes.len() == 2 {
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().map(|x| x / lambda.sqrt()).collect();
        fix_sign(&mut v);
        axes.push(v);
    }
    axes.resize(2, vec![0.0; m]);
    let scale = axes.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    (0..m).map(|i| [axes[0][i] / scale, axes[1][i] / scale]).collect()
}

/// Two dimensional class positions from the eigenvectors of the two smallest
/// nonzero Laplacian eigenvalues of the symmetrized confusion graph.
/// Components are laid out separately and shifted along x.
pub fn spectral_layout(cm: &ConfusionMatrix) -> Result<Layout> {
    let n = cm.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("spectral layout needs at least 3 classes, got {n}")));
    }
    let a = affinity(cm);
    let component = components(&a);
    let n_comp = component.iter().max().map_or(0, |c| c + 1);
    let mut coords = vec![[0.0; 2]; n];
    for c in 0..n_comp {
        let members: Vec<usize> = (0..n).filter(|&i| component[i] == c).collect();
        for (p, &i) in layout_component(&a, &members).into_iter().zip(&members) {
            coords[i] = [p[0] + COMPONENT_SPACING * c as f64, p[1]];
        }
    }
    Ok(Layout { classes: cm.classes.clone(), coords, component, disconnected: n_comp > 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let names = (0..counts.len()).map(|i| format!("c{i}")).collect();
        ConfusionMatrix::from_counts(names, counts).unwrap()
    }

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn diagonal_is_disconnected() {
        let l = spectral_layout(&cm(vec![vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 5]])).unwrap();
        assert!(l.disconnected);
        assert_eq!(l.component, vec![0, 1, 2]);
    }

    #[test]
    fn confused_pair_is_closer() {
        let l = spectral_layout(&cm(vec![vec![80, 20, 1], vec![30, 70, 1], vec![1, 1, 98]])).unwrap();
        assert!(!l.disconnected);
        let pair = dist(l.coords[0], l.coords[1]);
        assert!(pair < dist(l.coords[0], l.coords[2]));
        assert!(pair < dist(l.coords[1], l.coords[2]));
    }

    #[test]
    fn too_few_classes() {
        assert!(spectral_layout(&cm(vec![vec![1, 0], vec![0, 1]])).is_err());
    }
}
