//! Leave-one-domain-out protocol: train on each domain, evaluate on all,
//! aggregate the diagonal (in-domain), off-diagonal (cross-domain), and
//! overall cell means.

use std::collections::BTreeMap;

use ht_core::error::{Error, Result};

/// Named metric values for one (train, eval) cell.
pub type MetricRow = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub struct CrossMatrix {
    pub domains: Vec<String>,
    /// `cells[i][j]` = trained on domain i, evaluated on domain j.
    pub cells: Vec<Vec<MetricRow>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossAggregates {
    pub in_domain: f64,
    pub cross_domain: f64,
    pub overall: f64,
}

/// Run the protocol. `train_and_eval_row(i)` trains on domain `i` and
/// returns one metric row per evaluation domain, in order.
pub fn cross_dataset_run(
    domains: &[String],
    mut train_and_eval_row: impl FnMut(usize) -> Result<Vec<MetricRow>>,
) -> Result<CrossMatrix> {
    if domains.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-domain-out needs >= 2 domains, got {}",
            domains.len()
        )));
    }
    let mut cells = Vec::with_capacity(domains.len());
    for i in 0..domains.len() {
        let row = train_and_eval_row(i)?;
        if row.len() != domains.len() {
            return Err(Error::Contract(format!(
                "row {i} has {} cells for {} domains",
                row.len(),
                domains.len()
            )));
        }
        cells.push(row);
    }
    Ok(CrossMatrix {
        domains: domains.to_vec(),
        cells,
    })
}

impl CrossMatrix {
    pub fn get(&self, train: usize, eval: usize) -> Result<&MetricRow> {
        self.cells
            .get(train)
            .and_then(|r| r.get(eval))
            .ok_or_else(|| Error::Protocol(format!("no cell ({train}, {eval})")))
    }

    /// Aggregate one metric across scopes.
    pub fn aggregate(&self, metric: &str) -> Result<CrossAggregates> {
        let mut diag = Vec::new();
        let mut off = Vec::new();
        let mut all = Vec::new();
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                let v = *cell.get(metric).ok_or_else(|| {
                    Error::Protocol(format!("cell ({i}, {j}) lacks metric `{metric}`"))
                })?;
                all.push(v);
                if i == j {
                    diag.push(v);
                } else {
                    off.push(v);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(CrossAggregates {
            in_domain: mean(&diag),
            cross_domain: mean(&off),
            overall: mean(&all),
        })
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.cells
            .first()
            .and_then(|r| r.first())
            .map(|c| c.keys().cloned().collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f64]) -> Vec<MetricRow> {
        vals.iter()
            .map(|v| {
                let mut m = MetricRow::new();
                m.insert("dice".to_string(), *v);
                m
            })
            .collect()
    }

    #[test]
    fn two_domain_structure_and_aggregates() {
        let domains = vec!["a".to_string(), "b".to_string()];
        let matrix = cross_dataset_run(&domains, |i| {
            Ok(row(if i == 0 { &[90.0, 60.0] } else { &[50.0, 80.0] }))
        })
        .unwrap();
        assert_eq!(matrix.cells.len(), 2);
        let agg = matrix.aggregate("dice").unwrap();
        assert_eq!(agg.in_domain, 85.0);
        assert_eq!(agg.cross_domain, 55.0);
        assert_eq!(agg.overall, 70.0);
    }

    #[test]
    fn aggregates_match_brute_force_cell_average() {
        let domains: Vec<String> = (0..3).map(|i| format!("d{i}")).collect();
        let vals = [[81.0, 42.0, 37.0], [55.0, 77.0, 41.0], [33.0, 46.0, 91.0]];
        let matrix = cross_dataset_run(&domains, |i| Ok(row(&vals[i]))).unwrap();
        let agg = matrix.aggregate("dice").unwrap();
        let mut diag = 0.0;
        let mut off = 0.0;
        let mut all = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                all += vals[i][j];
                if i == j {
                    diag += vals[i][j];
                } else {
                    off += vals[i][j];
                }
            }
        }
        assert!((agg.in_domain - diag / 3.0).abs() < 1e-9);
        assert!((agg.cross_domain - off / 6.0).abs() < 1e-9);
        assert!((agg.overall - all / 9.0).abs() < 1e-9);
    }

    #[test]
    fn single_domain_is_protocol_error() {
        let domains = vec!["only".to_string()];
        let err = cross_dataset_run(&domains, |_| Ok(row(&[1.0]))).err().unwrap();
        assert_eq!(err.category(), "protocol");
    }

    #[test]
    fn short_row_is_contract_error() {
        let domains = vec!["a".to_string(), "b".to_string()];
        let err = cross_dataset_run(&domains, |_| Ok(row(&[1.0]))).err().unwrap();
        assert_eq!(err.category(), "contract");
    }
}
