//! Intraday price panels and their log-return curves.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use heavyfpca::io::{read_table, write_csv};
use heavyfpca::{CurveSample, Grid};

use crate::CliError;

/// `N` days by `T` minutes of strictly positive prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    /// Column labels (minute stamps); kept verbatim for export.
    pub minutes: Vec<String>,
    /// `prices[i][t]`, day `i`, minute `t`.
    pub prices: Vec<Vec<f64>>,
}

impl PricePanel {
    pub fn new(minutes: Vec<String>, prices: Vec<Vec<f64>>) -> Result<PricePanel, CliError> {
        if minutes.len() < 2 {
            return Err(CliError::Data("a price panel needs at least 2 minutes".into()));
        }
        if prices.is_empty() {
            return Err(CliError::Data("a price panel needs at least 1 day".into()));
        }
        for (i, row) in prices.iter().enumerate() {
            if row.len() != minutes.len() {
                return Err(CliError::Data(format!(
                    "day {}: expected {} prices, found {}",
                    i + 1,
                    minutes.len(),
                    row.len()
                )));
            }
            for (t, p) in row.iter().enumerate() {
                if !(*p > 0.0) || !p.is_finite() {
                    return Err(CliError::Data(format!(
                        "row {}, column {}: price {p} is not positive",
                        i + 2,
                        t + 1
                    )));
                }
            }
        }
        Ok(PricePanel { minutes, prices })
    }

    /// Header row of minute labels, then one row of prices per day. Row and
    /// column numbers in errors are 1-based file positions.
    pub fn read(reader: impl Read) -> Result<PricePanel, CliError> {
        let table = read_table(reader).map_err(|e| CliError::Data(e.to_string()))?;
        PricePanel::new(table.header, table.rows)
    }

    pub fn write(&self, writer: impl Write) -> Result<(), CliError> {
        let rows = self
            .prices
            .iter()
            .map(|r| r.iter().map(|p| format!("{p}")).collect())
            .collect::<Vec<_>>();
        let header = self.minutes.iter().map(String::as_str).collect::<Vec<_>>();
        write_csv(writer, &header, &rows).map_err(|e| CliError::Data(e.to_string()))
    }

    pub fn days(&self) -> usize {
        self.prices.len()
    }

    pub fn minutes(&self) -> usize {
        self.minutes.len()
    }
}

/// `X_i(t) = ln P_i(t) − ln P_i(t₁)` on the columns rescaled to `[0, 1]`.
pub fn returns_from_prices(panel: &PricePanel) -> Result<CurveSample, CliError> {
    let t = panel.minutes();
    let grid = Grid::uniform(t).map_err(|e| CliError::Data(e.to_string()))?;
    let data = DMatrix::from_fn(panel.days(), t, |i, j| {
        let row = &panel.prices[i];
        row[j].ln() - row[0].ln()
    });
    CurveSample::new(grid, data).map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: Vec<Vec<f64>>) -> PricePanel {
        let t = rows[0].len();
        PricePanel::new((0..t).map(|m| format!("m{m}")).collect(), rows).unwrap()
    }

    #[test]
    fn constant_prices_give_zero_curves() {
        let x = returns_from_prices(&panel(vec![vec![5.0; 6], vec![0.25; 6]])).unwrap();
        assert!(x.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exponential_prices_give_linear_curves() {
        let c = 0.37;
        let t = 11;
        let rows = (0..3)
            .map(|i| {
                let p0 = 10.0 + i as f64;
                (0..t).map(|j| p0 * (c * j as f64 / (t - 1) as f64).exp()).collect()
            })
            .collect();
        let x = returns_from_prices(&panel(rows)).unwrap();
        let pts = x.grid().points().to_vec();
        for i in 0..3 {
            assert_eq!(x.data()[(i, 0)], 0.0);
            for (j, p) in pts.iter().enumerate() {
                assert!((x.data()[(i, j)] - c * p).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn doubling_at_last_minute() {
        let x = returns_from_prices(&panel(vec![vec![3.0, 3.0, 3.0, 6.0]])).unwrap();
        assert!((x.data()[(0, 3)] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_price_is_located() {
        let e = PricePanel::read("a,b,c\n1,2,3\n1,0,3\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 3, column 2"), "{e}");
        assert_eq!(e.exit_code(), 4);
        let e = PricePanel::read("a,b,c\n1,2,3\n1,,3\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 3, column 2"), "{e}");
        let e = PricePanel::read("a,b,c\n1,2\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
    }

    #[test]
    fn panel_round_trip_is_bit_exact() {
        let p = panel(vec![
            vec![100.1, 100.2 + 1e-13, 99.999_999_7],
            vec![1.0 / 3.0, 7e-8, 1e12],
        ]);
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let back = PricePanel::read(buf.as_slice()).unwrap();
        assert_eq!(back.minutes, p.minutes);
        for (a, b) in back.prices.iter().flatten().zip(p.prices.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
