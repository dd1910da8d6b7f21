use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

pub fn from_dense(m: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                coo.push(i, j, v);
            }
        }
    }
    CsrMatrix::from(&coo)
}

pub fn from_diagonal(d: &[f64]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(d.len(), d.len());
    for (i, &v) in d.iter().enumerate() {
        if v != 0.0 {
            coo.push(i, i, v);
        }
    }
    CsrMatrix::from(&coo)
}

pub fn identity(n: usize) -> CsrMatrix<f64> {
    CsrMatrix::identity(n)
}

/// Kronecker product `a ⊗ b`; row index `i·rows(b) + k`.
pub fn kron(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    let mut offsets = Vec::with_capacity(ra * rb + 1);
    let mut cols = Vec::with_capacity(a.nnz() * b.nnz());
    let mut vals = Vec::with_capacity(a.nnz() * b.nnz());
    offsets.push(0);
    for i in 0..ra {
        let arow = a.row(i);
        for k in 0..rb {
            let brow = b.row(k);
            for (&j, &av) in arow.col_indices().iter().zip(arow.values()) {
                for (&l, &bv) in brow.col_indices().iter().zip(brow.values()) {
                    cols.push(j * cb + l);
                    vals.push(av * bv);
                }
            }
            offsets.push(cols.len());
        }
    }
    CsrMatrix::try_from_csr_data(ra * rb, ca * cb, offsets, cols, vals)
        .expect("kron of valid CSR matrices is valid CSR")
}

pub fn matvec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut s = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            s += v * x[j];
        }
        y[i] = s;
    }
    y
}

/// `aᵀ x` without forming the transpose.
pub fn matvec_t(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            y[j] += v * xi;
        }
    }
    y
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, &v) in a.triplet_iter() {
        m[(i, j)] += v;
    }
    m
}

/// Largest absolute entry.
pub fn max_abs(a: &CsrMatrix<f64>) -> f64 {
    a.values().iter().fold(0.0, |acc: f64, &x| acc.max(x.abs()))
}

/// Entrywise `a - b` as a sparse matrix; used for exact identity checks.
pub fn sub(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    a - b
}
