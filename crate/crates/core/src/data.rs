//! Column-major regression data.

/// Input points stored column-wise (`columns[i][k]` is variable `i` of point
/// `k`) with one target per point.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    /// Panics if rows have unequal lengths or `y` does not match the row count.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Self {
        assert_eq!(rows.len(), y.len(), "one target per row");
        let dim = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); dim];
        for r in rows {
            assert_eq!(r.len(), dim, "ragged rows");
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Dataset { columns, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[k]).collect()
    }

    pub fn target_variance(&self) -> f64 {
        let n = self.len().max(1) as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        self.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}
