//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Pivots are chosen singletons-first, then by a Markowitz count with a
//! relative threshold. Basis columns are indexed by their position in the
//! basis, rows by constraint index.

const PIVOT_ABS_TOL: f64 = 1e-11;
const THRESHOLD: f64 = 0.1;
const DROP_TOL: f64 = 1e-14;

/// Basis positions that could not be pivoted, paired with rows left without a
/// pivot. The caller swaps in the slack of each row.
#[derive(Debug)]
pub(crate) struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

struct Eta {
    r: usize,
    pivot: f64,
    idx: Vec<usize>,
    val: Vec<f64>,
}

pub(crate) struct Lu {
    m: usize,
    piv_row: Vec<usize>,
    piv_col: Vec<usize>,
    piv_val: Vec<f64>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    etas: Vec<Eta>,
}

impl Lu {
    /// Factors the `m x m` matrix whose column `k` is `cols[k]` (row, value).
    ///
    /// Storage is append-only: entries of eliminated rows stay in place and
    /// are skipped, and dropped entries are zeroed, so positions recorded in
    /// the row lists remain valid throughout.
    pub fn factor(m: usize, cols: Vec<Vec<(usize, f64)>>) -> Result<Lu, Singular> {
        debug_assert_eq!(cols.len(), m);
        let mut cols = cols;
        let mut rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        let mut row_count = vec![0usize; m];
        let mut col_count = vec![0usize; m];
        for (j, col) in cols.iter_mut().enumerate() {
            col.retain(|&(_, v)| v != 0.0);
            for (idx, &(i, _)) in col.iter().enumerate() {
                rows[i].push((j, idx));
                row_count[i] += 1;
            }
            col_count[j] = col.len();
        }
        let mut col_active = vec![true; m];
        let mut row_active = vec![true; m];
        let mut active: Vec<usize> = (0..m).collect();
        let mut active_pos: Vec<usize> = (0..m).collect();
        let mut col_stack: Vec<usize> = (0..m).rev().filter(|&j| col_count[j] == 1).collect();
        let mut row_stack: Vec<usize> = (0..m).rev().filter(|&i| row_count[i] == 1).collect();

        let mut lu = Lu {
            m,
            piv_row: Vec::with_capacity(m),
            piv_col: Vec::with_capacity(m),
            piv_val: Vec::with_capacity(m),
            l_start: vec![0],
            l_idx: Vec::new(),
            l_val: Vec::new(),
            u_start: vec![0],
            u_idx: Vec::new(),
            u_val: Vec::new(),
            etas: Vec::new(),
        };
        let mut singular_cols = Vec::new();
        let mut work = vec![usize::MAX; m];
        let mut lrow: Vec<(usize, f64)> = Vec::new();

        let deactivate = |j: usize, active: &mut Vec<usize>, active_pos: &mut Vec<usize>| {
            let p = active_pos[j];
            let last = *active.last().unwrap();
            active.swap_remove(p);
            if last != j {
                active_pos[last] = p;
            }
        };
        // Active entries of column j.
        macro_rules! live {
            ($j:expr) => {
                cols[$j]
                    .iter()
                    .copied()
                    .filter(|&(i, v)| row_active[i] && v != 0.0)
            };
        }

        while !active.is_empty() {
            let mut choice: Option<(usize, usize)> = None;
            while let Some(j) = col_stack.pop() {
                if col_active[j] && col_count[j] == 1 {
                    let (i, v) = live!(j).next().unwrap();
                    if v.abs() > PIVOT_ABS_TOL {
                        choice = Some((i, j));
                        break;
                    }
                }
            }
            if choice.is_none() {
                while let Some(i) = row_stack.pop() {
                    if !row_active[i] || row_count[i] != 1 {
                        continue;
                    }
                    let found = rows[i]
                        .iter()
                        .copied()
                        .find(|&(j, idx)| col_active[j] && cols[j][idx].1 != 0.0);
                    if let Some((j, idx)) = found {
                        let v = cols[j][idx].1.abs();
                        let cmax = live!(j).fold(0.0f64, |a, (_, x)| a.max(x.abs()));
                        if v > PIVOT_ABS_TOL && v >= 1e-3 * cmax {
                            choice = Some((i, j));
                            break;
                        }
                    }
                }
            }
            if choice.is_none() {
                let min_count = active.iter().map(|&j| col_count[j]).min().unwrap();
                if min_count == 0 {
                    let empty: Vec<usize> = active
                        .iter()
                        .copied()
                        .filter(|&j| col_count[j] == 0)
                        .collect();
                    for j in empty {
                        col_active[j] = false;
                        deactivate(j, &mut active, &mut active_pos);
                        singular_cols.push(j);
                    }
                    continue;
                }
                let mut candidates: Vec<usize> = active
                    .iter()
                    .copied()
                    .filter(|&j| col_count[j] <= min_count + 1)
                    .collect();
                candidates.sort_unstable_by_key(|&j| (col_count[j], j));
                let mut best: Option<(usize, usize, usize, f64)> = None;
                let mut examined = 0;
                for j in candidates {
                    let cmax = live!(j).fold(0.0f64, |a, (_, x)| a.max(x.abs()));
                    if cmax <= PIVOT_ABS_TOL {
                        continue;
                    }
                    for (i, v) in live!(j) {
                        if v.abs() >= THRESHOLD * cmax {
                            let cost = (row_count[i] - 1) * (col_count[j] - 1);
                            let better = match best {
                                None => true,
                                Some((bc, _, _, bv)) => cost < bc || (cost == bc && v.abs() > bv),
                            };
                            if better {
                                best = Some((cost, i, j, v.abs()));
                            }
                        }
                    }
                    examined += 1;
                    if examined >= 4 && best.is_some() {
                        break;
                    }
                }
                match best {
                    Some((_, i, j, _)) => choice = Some((i, j)),
                    None => {
                        // Every remaining column is numerically zero.
                        for &j in &active {
                            col_active[j] = false;
                            singular_cols.push(j);
                        }
                        active.clear();
                        break;
                    }
                }
            }
            let (r, c) = choice.unwrap();

            // Eliminate.
            let p = live!(c).find(|&(i, _)| i == r).unwrap().1;
            lrow.clear();
            for (i, v) in live!(c) {
                if i != r {
                    lrow.push((i, v / p));
                }
            }
            col_active[c] = false;
            deactivate(c, &mut active, &mut active_pos);
            row_active[r] = false;
            for &(i, l) in &lrow {
                lu.l_idx.push(i);
                lu.l_val.push(l);
                row_count[i] -= 1;
                if row_count[i] == 1 {
                    row_stack.push(i);
                }
            }
            lu.l_start.push(lu.l_idx.len());
            lu.piv_row.push(r);
            lu.piv_col.push(c);
            lu.piv_val.push(p);

            let row_r = std::mem::take(&mut rows[r]);
            for &(j, idx) in &row_r {
                if !col_active[j] {
                    continue;
                }
                let u = cols[j][idx].1;
                if u == 0.0 {
                    continue;
                }
                lu.u_idx.push(j);
                lu.u_val.push(u);
                col_count[j] -= 1;
                if !lrow.is_empty() {
                    for (pos, &(i, _)) in cols[j].iter().enumerate() {
                        if row_active[i] {
                            work[i] = pos;
                        }
                    }
                    for &(i, l) in &lrow {
                        let delta = -l * u;
                        if work[i] != usize::MAX {
                            let e = &mut cols[j][work[i]];
                            let was_zero = e.1 == 0.0;
                            e.1 += delta;
                            if e.1.abs() <= DROP_TOL {
                                e.1 = 0.0;
                            }
                            match (was_zero, e.1 == 0.0) {
                                (false, true) => {
                                    col_count[j] -= 1;
                                    row_count[i] -= 1;
                                    if row_count[i] == 1 {
                                        row_stack.push(i);
                                    }
                                }
                                (true, false) => {
                                    col_count[j] += 1;
                                    row_count[i] += 1;
                                }
                                _ => {}
                            }
                        } else if delta.abs() > DROP_TOL {
                            work[i] = cols[j].len();
                            rows[i].push((j, cols[j].len()));
                            cols[j].push((i, delta));
                            col_count[j] += 1;
                            row_count[i] += 1;
                        }
                    }
                    for &(i, _) in cols[j].iter() {
                        work[i] = usize::MAX;
                    }
                }
                if col_count[j] == 1 {
                    col_stack.push(j);
                }
            }
            lu.u_start.push(lu.u_idx.len());
        }

        if singular_cols.is_empty() {
            Ok(lu)
        } else {
            let rows_left: Vec<usize> = (0..m).filter(|&i| row_active[i]).collect();
            debug_assert_eq!(rows_left.len(), singular_cols.len());
            Err(Singular {
                positions: singular_cols,
                rows: rows_left,
            })
        }
    }

    pub fn num_etas(&self) -> usize {
        self.etas.len()
    }

    /// Overwrites `b` (indexed by row) with `B^{-1} b` (indexed by position).
    pub fn ftran(&self, b: &mut [f64]) {
        for k in 0..self.piv_row.len() {
            let t = b[self.piv_row[k]];
            if t != 0.0 {
                for e in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[e]] -= self.l_val[e] * t;
                }
            }
        }
        let mut x = vec![0.0; self.m];
        for k in (0..self.piv_row.len()).rev() {
            let mut s = b[self.piv_row[k]];
            for e in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[e] * x[self.u_idx[e]];
            }
            x[self.piv_col[k]] = s / self.piv_val[k];
        }
        for eta in &self.etas {
            let xr = x[eta.r] / eta.pivot;
            x[eta.r] = xr;
            if xr != 0.0 {
                for (&i, &d) in eta.idx.iter().zip(&eta.val) {
                    x[i] -= d * xr;
                }
            }
        }
        b.copy_from_slice(&x);
    }

    /// Overwrites `d` (indexed by position) with `B^{-T} d` (indexed by row).
    pub fn btran(&self, d: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut s = d[eta.r];
            for (&i, &v) in eta.idx.iter().zip(&eta.val) {
                s -= v * d[i];
            }
            d[eta.r] = s / eta.pivot;
        }
        let mut z = vec![0.0; self.m];
        for k in 0..self.piv_row.len() {
            let w = d[self.piv_col[k]] / self.piv_val[k];
            z[self.piv_row[k]] = w;
            if w != 0.0 {
                for e in self.u_start[k]..self.u_start[k + 1] {
                    d[self.u_idx[e]] -= self.u_val[e] * w;
                }
            }
        }
        for k in (0..self.piv_row.len()).rev() {
            let mut s = z[self.piv_row[k]];
            for e in self.l_start[k]..self.l_start[k + 1] {
                s -= self.l_val[e] * z[self.l_idx[e]];
            }
            z[self.piv_row[k]] = s;
        }
        d.copy_from_slice(&z);
    }

    /// Records the replacement of basis position `r` by a column whose
    /// ftran'd image is `w`.
    pub fn push_eta(&mut self, r: usize, w: &[f64]) {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &v) in w.iter().enumerate() {
            if i != r && v.abs() > DROP_TOL {
                idx.push(i);
                val.push(v);
            }
        }
        self.etas.push(Eta {
            r,
            pivot: w[r],
            idx,
            val,
        });
    }
}
