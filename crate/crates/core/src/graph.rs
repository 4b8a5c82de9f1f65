//! Network structure: binary adjacency, row-normalized weights, and the
//! graph builders used by simulations and real-data ingestion.


use crate::error::{Error, Result};
use crate::linalg::{frob_sq, Mat};

/// Binary `N×N` adjacency matrix without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    entries: Mat,
}

impl AdjacencyMatrix {
    pub fn new(entries: Mat) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Shape(format!(
                "adjacency must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..entries.nrows() {
            if entries[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
        }
        if entries.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidInput("adjacency entries must be 0 or 1".into()));
        }
        Ok(Self { entries })
    }

    pub fn empty(n: usize) -> Self {
        Self { entries: Mat::zeros(n, n) }
    }

    /// Builds from directed `(src, dst)` pairs; duplicates collapse.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut entries = Mat::zeros(n, n);
        for &(s, d) in edges {
            if s >= n || d >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({s},{d}) references a node outside 0..{n}"
                )));
            }
            if s == d {
                return Err(Error::InvalidInput(format!("self-loop at node {s}")));
            }
            entries[(s, d)] = 1.0;
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.entries.row(i).iter().filter(|&&x| x != 0.0).count()
    }

    /// Directed edges in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.entries[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Row-normalized network operator with its cached squared Frobenius norm.
/// Rows of isolated nodes are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: Mat,
    frob_sq: f64,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    /// `‖W‖_F²`.
    pub fn frob_sq(&self) -> f64 {
        self.frob_sq
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }
}

/// Divides each row by its out-degree; zero-degree rows stay zero.
pub fn row_normalize(adj: &AdjacencyMatrix) -> WeightMatrix {
    let n = adj.n();
    let mut entries = adj.entries().clone();
    for i in 0..n {
        let deg: f64 = entries.row(i).sum();
        if deg > 0.0 {
            entries.row_mut(i).iter_mut().for_each(|x| *x /= deg);
        }
    }
    let frob_sq = frob_sq(&entries);
    WeightMatrix { entries, frob_sq }
}

/// Directed graph where node `i` points to `i+1, …, i+k (mod N)`.
pub fn build_k_regular_cycle(n: usize, k: usize) -> Result<AdjacencyMatrix> {
    if k < 1 || k >= n {
        return Err(Error::InvalidDegree { n, k });
    }
    let mut entries = Mat::zeros(n, n);
    for i in 0..n {
        for step in 1..=k {
            entries[(i, (i + step) % n)] = 1.0;
        }
    }
    Ok(AdjacencyMatrix { entries })
}

/// Edge `i→j` (for `i≠j`) iff `similarity[i,j] > threshold`.
pub fn build_threshold_graph(similarity: &Mat, threshold: f64) -> Result<AdjacencyMatrix> {
    if !similarity.is_square() {
        return Err(Error::Shape(format!(
            "similarity must be square, got {}x{}",
            similarity.nrows(),
            similarity.ncols()
        )));
    }
    let n = similarity.nrows();
    let entries = Mat::from_fn(n, n, |i, j| {
        if i != j && similarity[(i, j)] > threshold {
            1.0
        } else {
            0.0
        }
    });
    Ok(AdjacencyMatrix { entries })
}

/// Gaussian kernel `exp(-(d_ij/σ)²)` on a distance matrix, for use with
/// [`build_threshold_graph`].
pub fn gaussian_kernel(distances: &Mat, bandwidth: f64) -> Result<Mat> {
    if !distances.is_square() {
        return Err(Error::Shape("distance matrix must be square".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidInput("kernel bandwidth must be positive".into()));
    }
    Ok(distances.map(|d| (-(d / bandwidth).powi(2)).exp()))
}

/// Pearson correlation between the columns of `series` (rows are time).
pub fn correlation_matrix(series: &Mat) -> Mat {
    let (t, n) = series.shape();
    let mut centered = series.clone();
    let mut sd = vec![0.0; n];
    for j in 0..n {
        let mean = series.column(j).sum() / t as f64;
        centered.column_mut(j).iter_mut().for_each(|x| *x -= mean);
        sd[j] = centered.column(j).norm();
    }
    let mut corr = centered.transpose() * &centered;
    for i in 0..n {
        for j in 0..n {
            let denom = sd[i] * sd[j];
            corr[(i, j)] = if denom > 0.0 { corr[(i, j)] / denom } else { 0.0 };
        }
    }
    corr
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle3() -> AdjacencyMatrix {
        build_k_regular_cycle(3, 1).unwrap()
    }

    #[test]
    fn cycle_normalizes_to_itself() {
        let adj = cycle3();
        let w = row_normalize(&adj);
        assert_eq!(w.entries(), adj.entries());
        assert_eq!(w.frob_sq(), 3.0);
        for i in 0..3 {
            assert_eq!(w.entries().row(i).sum(), 1.0);
        }
    }

    #[test]
    fn zero_degree_row_stays_zero() {
        let adj = AdjacencyMatrix::new(Mat::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ))
        .unwrap();
        let w = row_normalize(&adj);
        let expected = Mat::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(w.entries(), &expected);
        assert_eq!(w.frob_sq(), 1.5);
    }

    #[test]
    fn k_regular_frob_sq_is_n_over_k() {
        for (n, k) in [(5, 2), (10, 3), (17, 8), (40, 20)] {
            let w = row_normalize(&build_k_regular_cycle(n, k).unwrap());
            let expected = n as f64 / k as f64;
            assert!((w.frob_sq() - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn k_regular_construction() {
        let adj = build_k_regular_cycle(4, 1).unwrap();
        assert_eq!(adj.edges(), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        let adj = build_k_regular_cycle(5, 2).unwrap();
        assert_eq!(adj.entries().row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((0..5).all(|i| adj.out_degree(i) == 2));
        assert!(matches!(build_k_regular_cycle(3, 3), Err(Error::InvalidDegree { n: 3, k: 3 })));
        assert!(matches!(build_k_regular_cycle(3, 0), Err(Error::InvalidDegree { .. })));
    }

    #[test]
    fn threshold_graph_examples() {
        let ones = Mat::from_element(4, 4, 1.0);
        let adj = build_threshold_graph(&ones, 0.5).unwrap();
        assert_eq!(adj.edges().len(), 12);
        let adj = build_threshold_graph(&ones, 1.1).unwrap();
        assert!(adj.edges().is_empty());
        let s = Mat::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.0, 0.7, 0.2, 0.7, 1.0]);
        let adj = build_threshold_graph(&s, 0.5).unwrap();
        assert_eq!(adj.edges(), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        assert_eq!(adj.entries(), &adj.entries().transpose());
        assert!(matches!(build_threshold_graph(&Mat::zeros(2, 3), 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn adjacency_validation() {
        assert!(AdjacencyMatrix::new(Mat::identity(2, 2)).is_err());
        assert!(AdjacencyMatrix::new(Mat::from_element(2, 2, 0.5)).is_err());
        assert!(AdjacencyMatrix::from_edges(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn kernel_and_correlation() {
        let d = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let k = gaussian_kernel(&d, 1.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        let s = Mat::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let c = correlation_matrix(&s);
        assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
    }
}
