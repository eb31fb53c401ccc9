use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::dot;

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedPoint {
    pub word: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Unit principal directions, first then second.
    pub components: [Vec<f64>; 2],
    /// Sample variance along each component.
    pub explained_variance: [f64; 2],
}

impl Projection {
    /// `word<TAB>x<TAB>y` per point.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{}\t{:e}\t{:e}\n", p.word, p.x, p.y));
        }
        out
    }

    /// A labeled scatter plot as an SVG document.
    pub fn to_svg(&self) -> String {
        const SIZE: f64 = 800.0;
        const PAD: f64 = 60.0;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let sx = if x1 > x0 { (SIZE - 2.0 * PAD) / (x1 - x0) } else { 1.0 };
        let sy = if y1 > y0 { (SIZE - 2.0 * PAD) / (y1 - y0) } else { 1.0 };
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for p in &self.points {
            let cx = PAD + (p.x - x0) * sx;
            let cy = SIZE - PAD - (p.y - y0) * sy;
            out.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"steelblue\"/>\
                 <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
                cx + 4.0,
                cy - 4.0,
                escape_xml(&p.word)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Mean-centered projection onto the top two principal components, found by
/// power iteration on the covariance matrix with deflation.
///
/// Component signs are fixed so that each direction's largest-magnitude
/// coordinate is positive.
pub fn project_embeddings_2d(items: &[(String, Vec<f64>)]) -> Result<Projection> {
    if items.len() < 3 {
        return Err(Error::invalid("projection needs at least three points"));
    }
    let dim = items[0].1.len();
    if dim == 0 || items.iter().any(|(_, v)| v.len() != dim) {
        return Err(Error::Shape("embeddings must share one positive length".into()));
    }
    let n = items.len() as f64;
    let mut mean = vec![0.0; dim];
    for (_, v) in items {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let centered: Vec<Vec<f64>> = items
        .iter()
        .map(|(_, v)| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![0.0; dim * dim];
    for row in &centered {
        for i in 0..dim {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..dim {
                cov[i * dim + j] += ri * row[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n - 1.0);

    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    if trace <= 0.0 {
        return Err(Error::invalid("all embeddings are identical; nothing to project"));
    }

    let (v1, l1) = dominant_eigenvector(&cov, dim, None, trace);
    for i in 0..dim {
        for j in 0..dim {
            cov[i * dim + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = dominant_eigenvector(&cov, dim, Some(&v1), trace);

    let points = items
        .iter()
        .zip(&centered)
        .map(|((w, _), c)| ProjectedPoint { word: w.clone(), x: dot(c, &v1), y: dot(c, &v2) })
        .collect();
    Ok(Projection { points, components: [v1, v2], explained_variance: [l1, l2.max(0.0)] })
}

fn mat_vec(m: &[f64], dim: usize, v: &[f64]) -> Vec<f64> {
    (0..dim).map(|i| dot(&m[i * dim..(i + 1) * dim], v)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn fix_sign(v: &mut [f64]) {
    let max = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if max < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Leading eigenpair of a symmetric PSD matrix. With `orthogonal_to`, the
/// result is kept orthogonal to that unit vector (used after deflation).
/// Vectors shorter than `1e-12 * scale` count as zero.
fn dominant_eigenvector(m: &[f64], dim: usize, orthogonal_to: Option<&[f64]>, scale: f64) -> (Vec<f64>, f64) {
    let negligible = 1e-12 * scale;
    let project_out = |v: &mut Vec<f64>| {
        if let Some(u) = orthogonal_to {
            let d = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, ui)| *x -= d * ui);
        }
    };
    // Start from the column with the largest norm; it lies in the range of m.
    let best_col = (0..dim)
        .max_by(|&a, &b| {
            let na: f64 = (0..dim).map(|i| m[i * dim + a].powi(2)).sum();
            let nb: f64 = (0..dim).map(|i| m[i * dim + b].powi(2)).sum();
            na.total_cmp(&nb).then(b.cmp(&a))
        })
        .unwrap_or(0);
    let mut v: Vec<f64> = (0..dim).map(|i| m[i * dim + best_col]).collect();
    project_out(&mut v);
    if normalize(&mut v) <= negligible {
        // Rank-deficient remainder: any unit vector orthogonal to the first.
        v = fallback_orthogonal(dim, orthogonal_to);
        return (v, 0.0);
    }
    for _ in 0..MAX_ITERATIONS {
        let mut next = mat_vec(m, dim, &v);
        project_out(&mut next);
        if normalize(&mut next) <= negligible {
            return (fallback_orthogonal(dim, orthogonal_to), 0.0);
        }
        if dot(&next, &v) < 0.0 {
            next.iter_mut().for_each(|x| *x = -*x);
        }
        project_out(&mut next);
        normalize(&mut next);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = next;
        if delta < TOLERANCE {
            break;
        }
    }
    fix_sign(&mut v);
    let lambda = dot(&v, &mat_vec(m, dim, &v));
    (v, lambda)
}

fn fallback_orthogonal(dim: usize, orthogonal_to: Option<&[f64]>) -> Vec<f64> {
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        if let Some(u) = orthogonal_to {
            let d = u[k];
            e.iter_mut().zip(u).for_each(|(x, ui)| *x -= d * ui);
        }
        if normalize(&mut e) > 1e-6 {
            fix_sign(&mut e);
            return e;
        }
    }
    vec![0.0; dim]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::Rng;

    fn labeled(points: Vec<Vec<f64>>) -> Vec<(String, Vec<f64>)> {
        points.into_iter().enumerate().map(|(i, v)| (format!("w{i}"), v)).collect()
    }

    #[test]
    fn planar_points_keep_their_distances() {
        let mut rng = stream(1, Stream::GradCheck);
        let dim = 8;
        // two orthonormal directions in R^8
        let mut a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut a);
        let mut b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = dot(&a, &b);
        b.iter_mut().zip(&a).for_each(|(x, y)| *x -= d * y);
        normalize(&mut b);
        let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let (s, t) = (rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0));
                (0..dim).map(|k| offset[k] + s * a[k] + t * b[k]).collect()
            })
            .collect();
        let proj = project_embeddings_2d(&labeled(pts.clone())).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let orig: f64 = pts[i].iter().zip(&pts[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let (p, q) = (&proj.points[i], &proj.points[j]);
                let flat = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                assert!((orig - flat).abs() < 1e-8, "{orig} vs {flat}");
            }
        }
        assert!(proj.explained_variance[0] >= proj.explained_variance[1]);
    }

    #[test]
    fn matches_dense_eigensolver() {
        let mut rng = stream(2, Stream::GradCheck);
        let (n, dim) = (50, 10);
        let scales: Vec<f64> = (0..dim).map(|k| 1.0 + k as f64).collect();
        let pts: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dim).map(|k| scales[k] * rng.random_range(-1.0..1.0)).collect()).collect();
        let proj = project_embeddings_2d(&labeled(pts.clone())).unwrap();

        let mean: Vec<f64> = (0..dim).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
        let x = DMatrix::from_fn(n, dim, |i, k| pts[i][k] - mean[k]);
        let cov = (x.transpose() * &x) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let oracle = DMatrix::from_fn(dim, 2, |i, c| eig.eigenvectors[(i, order[c])]);
        let ours = DMatrix::from_fn(dim, 2, |i, c| proj.components[c][i]);
        // principal angle cosines are the singular values of Q1^T Q2
        let sv = (oracle.transpose() * ours).singular_values();
        for s in sv.iter() {
            let angle = s.min(1.0).acos();
            assert!(angle < 1e-6, "principal angle {angle}");
        }
        assert!((proj.explained_variance[0] - eig.eigenvalues[order[0]]).abs() < 1e-8);
        assert!((proj.explained_variance[1] - eig.eigenvalues[order[1]]).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs() {
        let same = labeled(vec![vec![1.0, 2.0]; 4]);
        assert!(project_embeddings_2d(&same).is_err());
        assert!(project_embeddings_2d(&labeled(vec![vec![1.0], vec![2.0]])).is_err());
        // collinear points still project, with a zero second component
        let line = labeled(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]);
        let p = project_embeddings_2d(&line).unwrap();
        assert!(p.explained_variance[1].abs() < 1e-12);
        assert!(p.points.iter().all(|q| q.y.abs() < 1e-12), "{p:?}");
    }

    #[test]
    fn outputs_render() {
        let p = project_embeddings_2d(&labeled(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]])).unwrap();
        assert_eq!(p.to_tsv().lines().count(), 3);
        assert!(p.to_svg().starts_with("<svg"));
    }
}
