//! Multivariate series container, stacked-Hankel embedding, anti-diagonal
//! indexing, and diagonal-averaging reconstruction.
//!
//! Time indices `i` run 1..=N and series indices `j` run 1..=p in the public
//! API, matching the usual SSA conventions; storage is 0-based internally.

use ndarray::{Array2, ArrayView1};

use crate::error::{Result, RodessaError};
use crate::scalar::Scalar;

/// A collection of p univariate time series of common length N.
///
/// Values are stored as an N x p matrix: row i is the case at time i, column
/// j is the j-th series. All values must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries<T> {
    values: Array2<T>,
    names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl<T: Scalar> MultivariateSeries<T> {
    /// Build a series container, validating shape and finiteness.
    pub fn new(
        values: Array2<T>,
        names: Vec<String>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 || p < 1 {
            return Err(RodessaError::EmptySeries { rows: n, cols: p });
        }
        if names.len() != p {
            return Err(RodessaError::ShapeMismatch {
                expected: format!("{p} names"),
                got: format!("{}", names.len()),
            });
        }
        if let Some(ts) = &timestamps {
            if ts.len() != n {
                return Err(RodessaError::ShapeMismatch {
                    expected: format!("{n} timestamps"),
                    got: format!("{}", ts.len()),
                });
            }
        }
        for ((row, col), &x) in values.indexed_iter() {
            if !x.is_finite() {
                return Err(RodessaError::NonFinite { row, col });
            }
        }
        Ok(Self {
            values,
            names,
            timestamps,
        })
    }

    /// Build from values with autogenerated names `series_1`, ...
    pub fn from_values(values: Array2<T>) -> Result<Self> {
        let p = values.ncols();
        let names = (1..=p).map(|j| format!("series_{j}")).collect();
        Self::new(values, names, None)
    }

    /// Convenience constructor for a single univariate series.
    pub fn univariate(values: &[T]) -> Result<Self> {
        let arr = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("shape consistent by construction");
        Self::from_values(arr)
    }

    /// Number of time points N.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    /// Always false: construction enforces N >= 2.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of component series p.
    pub fn series_count(&self) -> usize {
        self.values.ncols()
    }

    /// The N x p value matrix.
    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    /// Value x_i^{(j)} with 1-based time and series indices.
    pub fn value(&self, i: usize, j: usize) -> T {
        self.values[[i - 1, j - 1]]
    }

    /// Column view of series j (1-based).
    pub fn series(&self, j: usize) -> ArrayView1<'_, T> {
        self.values.column(j - 1)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Copy names and timestamps from another series of the same shape.
    pub fn with_labels_of(mut self, other: &MultivariateSeries<T>) -> Self {
        if other.series_count() == self.series_count() {
            self.names = other.names.clone();
        }
        if other.len() == self.len() {
            self.timestamps = other.timestamps.clone();
        }
        self
    }
}

/// Embedding parameters: window length L against a series of length N.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingSpec {
    window: usize,
    len: usize,
}

impl EmbeddingSpec {
    /// Validate 1 < L < N.
    pub fn new(window: usize, len: usize) -> Result<Self> {
        if window <= 1 || window >= len {
            return Err(RodessaError::InvalidWindow { window, len });
        }
        Ok(Self { window, len })
    }

    /// Window length L (number of rows of the trajectory matrix).
    pub fn window(&self) -> usize {
        self.window
    }

    /// Series length N.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of lagged vectors per series, K_u = N - L + 1.
    pub fn k_u(&self) -> usize {
        self.len - self.window + 1
    }

    /// Total number of columns K = p * K_u of the stacked matrix.
    pub fn k(&self, p: usize) -> usize {
        p * self.k_u()
    }

    /// Cardinality n_i of the anti-diagonal at time i (1-based).
    pub fn diag_len(&self, i: usize) -> usize {
        let l = self.window;
        let k_u = self.k_u();
        i.min(l).min(k_u).min(self.len - i + 1)
    }
}

/// The L x K stacked trajectory matrix of a p-variate series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix<T> {
    data: Array2<T>,
    spec: EmbeddingSpec,
    p: usize,
}

impl<T: Scalar> TrajectoryMatrix<T> {
    /// Wrap an existing L x K matrix, validating the dimensions.
    pub fn from_parts(data: Array2<T>, spec: EmbeddingSpec, p: usize) -> Result<Self> {
        let (l, k) = data.dim();
        if l != spec.window() || k != spec.k(p) {
            return Err(RodessaError::ShapeMismatch {
                expected: format!("{}x{}", spec.window(), spec.k(p)),
                got: format!("{l}x{k}"),
            });
        }
        Ok(Self { data, spec, p })
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn series_count(&self) -> usize {
        self.p
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

/// The anti-diagonal A_i of block j: all global (row, column) cells of the
/// trajectory matrix that hold x_i^{(j)} after embedding. Cells are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagonalIndex {
    pub i: usize,
    pub j: usize,
    pub n_i: usize,
    pub cells: Vec<(usize, usize)>,
}

/// Map a p-variate series to its L x K stacked Hankel trajectory matrix.
///
/// Block j holds the K_u lagged windows of series j side by side, so entry
/// (l, k) of block j equals x_{l+k-1}^{(j)}.
pub fn embed<T: Scalar>(
    series: &MultivariateSeries<T>,
    spec: &EmbeddingSpec,
) -> Result<TrajectoryMatrix<T>> {
    if spec.len() != series.len() {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("series of length {}", spec.len()),
            got: format!("{}", series.len()),
        });
    }
    let l = spec.window();
    let k_u = spec.k_u();
    let p = series.series_count();
    let mut data = Array2::<T>::zeros((l, spec.k(p)));
    for j in 0..p {
        for k in 0..k_u {
            for row in 0..l {
                data[[row, j * k_u + k]] = series.values()[[row + k, j]];
            }
        }
    }
    TrajectoryMatrix::from_parts(data, *spec, p)
}

/// Enumerate the global cells of the anti-diagonal A_i within block j.
///
/// For a = 1..n_i the cells are (min(L,i)+1-a, min(K_u,i)-(n_i-a)+K_u(j-1)).
pub fn antidiagonal_cells(
    i: usize,
    j: usize,
    spec: &EmbeddingSpec,
    p: usize,
) -> Result<DiagonalIndex> {
    if i < 1 || i > spec.len() {
        return Err(RodessaError::IndexOutOfRange {
            what: "time index i",
            got: i,
            max: spec.len(),
        });
    }
    if j < 1 || j > p {
        return Err(RodessaError::IndexOutOfRange {
            what: "series index j",
            got: j,
            max: p,
        });
    }
    let l = spec.window();
    let k_u = spec.k_u();
    let n_i = spec.diag_len(i);
    let mut cells = Vec::with_capacity(n_i);
    for a in 1..=n_i {
        let row = l.min(i) + 1 - a;
        let col = k_u.min(i) - (n_i - a) + k_u * (j - 1);
        cells.push((row, col));
    }
    Ok(DiagonalIndex { i, j, n_i, cells })
}

/// Diagonal averaging (Hankelization): map an L x K fitted matrix back to a
/// p-variate series by averaging each anti-diagonal of each block.
pub fn diagonal_average<T: Scalar>(
    fit: &Array2<T>,
    spec: &EmbeddingSpec,
    p: usize,
) -> Result<MultivariateSeries<T>> {
    let (l, k) = fit.dim();
    if l != spec.window() || k != spec.k(p) {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("{}x{}", spec.window(), spec.k(p)),
            got: format!("{l}x{k}"),
        });
    }
    let n = spec.len();
    let k_u = spec.k_u();
    let mut values = Array2::<T>::zeros((n, p));
    for j in 0..p {
        for i in 1..=n {
            let n_i = spec.diag_len(i);
            let mut acc = T::zero();
            for a in 1..=n_i {
                let row = spec.window().min(i) - a; // 0-based
                let col = k_u.min(i) - (n_i - a) - 1 + k_u * j; // 0-based
                acc += fit[[row, col]];
            }
            values[[i - 1, j]] = acc / T::from_usize(n_i).expect("n_i fits in scalar");
        }
    }
    MultivariateSeries::from_values(values)
}

/// Predicted cell value `\hat x_{ia}^{(j)}` of the fit `u * v^T`: the entry
/// of the product at the a-th cell of anti-diagonal A_i in block j.
pub fn predicted_cell<T: Scalar>(
    u: &Array2<T>,
    v: &Array2<T>,
    i: usize,
    a: usize,
    j: usize,
    spec: &EmbeddingSpec,
    p: usize,
) -> Result<T> {
    let n_i = spec.diag_len(i);
    if a < 1 || a > n_i {
        return Err(RodessaError::IndexOutOfRange {
            what: "diagonal position a",
            got: a,
            max: n_i,
        });
    }
    let idx = antidiagonal_cells(i, j, spec, p)?;
    let (row, col) = idx.cells[a - 1];
    let q = u.ncols().min(v.ncols());
    let mut acc = T::zero();
    for r in 0..q {
        acc += u[[row - 1, r]] * v[[col - 1, r]];
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn spec(l: usize, n: usize) -> EmbeddingSpec {
        EmbeddingSpec::new(l, n).unwrap()
    }

    #[test]
    fn embed_univariate_example() {
        let s = MultivariateSeries::univariate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = embed(&s, &spec(2, 4)).unwrap();
        assert_eq!(x.data(), &array![[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]);
    }

    #[test]
    fn embed_constant_series() {
        let s = MultivariateSeries::univariate(&[5.0, 5.0, 5.0]).unwrap();
        let x = embed(&s, &spec(2, 3)).unwrap();
        assert_eq!(x.data(), &array![[5.0, 5.0], [5.0, 5.0]]);
    }

    #[test]
    fn embed_two_series_stacks_blocks() {
        // Hand enumeration of the stacked form for p = 2, L = 2.
        let values = array![[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]];
        let s = MultivariateSeries::from_values(values).unwrap();
        let x = embed(&s, &spec(2, 3)).unwrap();
        assert_eq!(x.data(), &array![[1.0, 2.0, 4.0, 5.0], [2.0, 3.0, 5.0, 6.0]]);
    }

    #[test]
    fn embed_rejects_bad_window() {
        let s = MultivariateSeries::univariate(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            EmbeddingSpec::new(1, 3),
            Err(RodessaError::InvalidWindow { .. })
        ));
        assert!(matches!(
            EmbeddingSpec::new(3, 3),
            Err(RodessaError::InvalidWindow { .. })
        ));
        // Spec length must match the series length.
        assert!(embed(&s, &spec(2, 4)).is_err());
    }

    #[test]
    fn series_rejects_non_finite() {
        let values = array![[1.0, 2.0], [f64::NAN, 3.0]];
        assert!(matches!(
            MultivariateSeries::from_values(values),
            Err(RodessaError::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn antidiagonal_corner_cell() {
        let d = antidiagonal_cells(1, 1, &spec(2, 4), 1).unwrap();
        assert_eq!(d.n_i, 1);
        assert_eq!(d.cells, vec![(1, 1)]);
    }

    #[test]
    fn antidiagonal_interior_cells() {
        let d = antidiagonal_cells(2, 1, &spec(2, 4), 1).unwrap();
        assert_eq!(d.n_i, 2);
        assert_eq!(d.cells, vec![(2, 1), (1, 2)]);
    }

    #[test]
    fn antidiagonal_cardinality_matches_min_formula() {
        let sp = spec(35, 70);
        let d = antidiagonal_cells(36, 1, &sp, 1).unwrap();
        assert_eq!(d.n_i, 35);
        // Independent oracle: n_i = min(i, L, K_u, N - i + 1).
        for i in 1..=70usize {
            let expect = i.min(35).min(36).min(70 - i + 1);
            assert_eq!(sp.diag_len(i), expect);
        }
    }

    #[test]
    fn antidiagonal_rejects_out_of_range() {
        let sp = spec(2, 4);
        assert!(antidiagonal_cells(0, 1, &sp, 1).is_err());
        assert!(antidiagonal_cells(5, 1, &sp, 1).is_err());
        assert!(antidiagonal_cells(1, 2, &sp, 1).is_err());
    }

    #[test]
    fn diagonal_average_round_trip() {
        let s = MultivariateSeries::univariate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = embed(&s, &spec(2, 4)).unwrap();
        let back = diagonal_average(x.data(), &spec(2, 4), 1).unwrap();
        assert_eq!(back.values(), s.values());
    }

    #[test]
    fn diagonal_average_hand_example() {
        // L = 2, N = 3: A_2 averages the entries 4 and 2.
        let m = array![[1.0, 2.0], [4.0, 3.0]];
        let s = diagonal_average(&m, &spec(2, 3), 1).unwrap();
        assert_eq!(s.values().column(0).to_vec(), vec![1.0, 3.0, 3.0]);
    }

    #[test]
    fn diagonal_average_zero_matrix() {
        let m = Array2::<f64>::zeros((2, 4));
        let s = diagonal_average(&m, &spec(2, 5), 1).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_average_shape_error() {
        let m = Array2::<f64>::zeros((2, 4));
        assert!(diagonal_average(&m, &spec(2, 5), 2).is_err());
    }

    #[test]
    fn predicted_cell_matches_dense_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let l = 3;
        let n = 6;
        let sp = spec(l, n);
        let k = sp.k(1);
        let u = Array2::from_shape_fn((l, 2), |_| rng.random::<f64>());
        let v = Array2::from_shape_fn((k, 2), |_| rng.random::<f64>());
        let product = u.dot(&v.t());
        for i in 1..=n {
            for a in 1..=sp.diag_len(i) {
                let idx = antidiagonal_cells(i, 1, &sp, 1).unwrap();
                let (row, col) = idx.cells[a - 1];
                let got = predicted_cell(&u, &v, i, a, 1, &sp, 1).unwrap();
                assert!((got - product[[row - 1, col - 1]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn predicted_cell_trivial_values() {
        let sp = spec(2, 4);
        let u0 = Array2::<f64>::zeros((2, 1));
        let v0 = Array2::<f64>::zeros((3, 1));
        assert_eq!(predicted_cell(&u0, &v0, 2, 1, 1, &sp, 1).unwrap(), 0.0);
        let u1 = Array2::<f64>::ones((2, 1));
        let v1 = Array2::<f64>::ones((3, 1));
        for i in 1..=4usize {
            for a in 1..=sp.diag_len(i) {
                assert_eq!(predicted_cell(&u1, &v1, i, a, 1, &sp, 1).unwrap(), 1.0);
            }
        }
        assert!(predicted_cell(&u1, &v1, 2, 3, 1, &sp, 1).is_err());
    }

    #[test]
    fn antidiagonals_partition_the_matrix() {
        // Every cell of u v^T is visited exactly once over all (i, a, j).
        for (l, n, p) in [(2usize, 4usize, 1usize), (3, 7, 2), (4, 6, 3)] {
            let sp = spec(l, n);
            let mut seen = Array2::<u32>::zeros((l, sp.k(p)));
            let mut total = 0usize;
            for j in 1..=p {
                for i in 1..=n {
                    let d = antidiagonal_cells(i, j, &sp, p).unwrap();
                    assert_eq!(d.cells.len(), d.n_i);
                    for (r, c) in d.cells {
                        seen[[r - 1, c - 1]] += 1;
                    }
                    total += d.n_i;
                }
            }
            assert_eq!(total, l * sp.k(p));
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(n in 3usize..40, l_frac in 0.0f64..1.0, p in 1usize..5, seed in 0u64..1000) {
            let l = 2 + ((l_frac * (n as f64 - 3.0)) as usize).min(n - 3);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let values = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 100.0 - 50.0);
            let s = MultivariateSeries::from_values(values).unwrap();
            let sp = EmbeddingSpec::new(l, n).unwrap();
            let x = embed(&s, &sp).unwrap();
            let back = diagonal_average(x.data(), &sp, p).unwrap();
            for (a, b) in s.values().iter().zip(back.values().iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn diag_cardinalities_sum_to_matrix_area(n in 3usize..60, l in 2usize..59) {
            prop_assume!(l < n);
            let sp = EmbeddingSpec::new(l, n).unwrap();
            let total: usize = (1..=n).map(|i| sp.diag_len(i)).sum();
            prop_assert_eq!(total, l * sp.k_u());
        }

        #[test]
        fn embedded_antidiagonals_are_constant(n in 3usize..25, l in 2usize..24, p in 1usize..4, seed in 0u64..500) {
            prop_assume!(l < n);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let values = Array2::from_shape_fn((n, p), |_| rng.random::<f64>());
            let s = MultivariateSeries::from_values(values).unwrap();
            let sp = EmbeddingSpec::new(l, n).unwrap();
            let x = embed(&s, &sp).unwrap();
            for j in 1..=p {
                for i in 1..=n {
                    let d = antidiagonal_cells(i, j, &sp, p).unwrap();
                    for (r, c) in d.cells {
                        prop_assert_eq!(x.data()[[r - 1, c - 1]], s.value(i, j));
                    }
                }
            }
        }
    }
}
