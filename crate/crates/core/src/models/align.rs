//! Label alignment of posterior draws for reporting. Column permutations and
//! sign flips leave QΛQᵀ and UDVᵀ unchanged, so only the factor-level
//! summaries are affected.

use nalgebra::DMatrix;

/// One draw of (Q, λ).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDraw {
    pub q: DMatrix<f64>,
    pub lambda: Vec<f64>,
}

/// One draw of (U, d, V).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdDraw {
    pub u: DMatrix<f64>,
    pub d: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Column order sorting `key` in decreasing order (stable).
fn order_descending(key: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..key.len()).collect();
    idx.sort_by(|&a, &b| key[b].total_cmp(&key[a]));
    idx
}

fn permute_columns(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), order.len(), |i, j| m[(i, order[j])])
}

/// Orders columns by λ descending, then flips each column of Q to have a
/// non-negative inner product with the matching column of the first
/// (ordered) draw.
pub fn align_eigen_draws(draws: &[EigenDraw]) -> Vec<EigenDraw> {
    let mut out: Vec<EigenDraw> = draws
        .iter()
        .map(|d| {
            let order = order_descending(&d.lambda);
            EigenDraw {
                q: permute_columns(&d.q, &order),
                lambda: order.iter().map(|&j| d.lambda[j]).collect(),
            }
        })
        .collect();
    if let Some(reference) = out.first().map(|d| d.q.clone()) {
        for d in out.iter_mut().skip(1) {
            for j in 0..d.q.ncols() {
                if d.q.column(j).dot(&reference.column(j)) < 0.0 {
                    d.q.column_mut(j).neg_mut();
                }
            }
        }
    }
    out
}

/// Orders columns by d descending, then flips u_j and v_j together so v_j
/// agrees in sign with the first draw's v_j.
pub fn align_svd_draws(draws: &[SvdDraw]) -> Vec<SvdDraw> {
    let mut out: Vec<SvdDraw> = draws
        .iter()
        .map(|s| {
            let order = order_descending(&s.d);
            SvdDraw {
                u: permute_columns(&s.u, &order),
                d: order.iter().map(|&j| s.d[j]).collect(),
                v: permute_columns(&s.v, &order),
            }
        })
        .collect();
    if let Some(reference) = out.first().map(|s| s.v.clone()) {
        for s in out.iter_mut().skip(1) {
            for j in 0..s.v.ncols() {
                if s.v.column(j).dot(&reference.column(j)) < 0.0 {
                    s.v.column_mut(j).neg_mut();
                    s.u.column_mut(j).neg_mut();
                }
            }
        }
    }
    out
}
