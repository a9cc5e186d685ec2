use crate::{Error, Result, TokenId};

/// Dense row-major score matrix: one row per masked position, one column per
/// regular vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "logit buffer of {} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(LogitMatrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        LogitMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged logit rows".into()));
        }
        Ok(LogitMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Top-1 token and top-1/top-2 gap for a single score row. Ties resolve to
/// the lowest column. Negative infinity is allowed (an impossible token);
/// NaN and positive infinity are not.
pub fn top_two(row: &[f64]) -> Option<(TokenId, f64)> {
    if row.len() < 2 {
        return None;
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    let mut have_best = false;
    for (j, &z) in row.iter().enumerate() {
        if !have_best || z > best.1 {
            if have_best {
                second = best.1;
            }
            best = (j, z);
            have_best = true;
        } else if z > second {
            second = z;
        }
    }
    let gap = if best.1 == second { 0.0 } else { best.1 - second };
    Some((best.0 as TokenId, gap))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_two_basic() {
        assert_eq!(top_two(&[3.0, 1.0, 0.5]), Some((0, 2.0)));
        assert_eq!(top_two(&[2.0, 2.0, 0.0]), Some((0, 0.0)));
        assert_eq!(top_two(&[0.0, 1.0, 4.0]), Some((2, 3.0)));
        assert_eq!(top_two(&[1.0]), None);
    }

    #[test]
    fn neg_infinity_columns() {
        assert_eq!(top_two(&[f64::NEG_INFINITY, 1.0, 0.0]), Some((1, 1.0)));
        assert_eq!(top_two(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), Some((0, 0.0)));
    }
}
