//! Per-run metrics rows and their CSV encoding.

use std::io::Write;

use crate::dpp::IndexSet;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Most recent completed episode return (in-progress return before the
    /// first episode ends).
    pub episode_return: f64,
    pub mean_q_per_critic: Vec<f64>,
    /// Population standard deviation of `mean_q_per_critic`.
    pub cross_critic_q_std: f64,
    pub mean_pairwise_cka: f64,
    pub fwd_flops: u64,
    pub bwd_flops: u64,
    /// Critics updated in the latest round, if any update has happened.
    pub selected: Option<IndexSet>,
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn csv_header(n_critics: usize) -> String {
    let mut cols = vec!["step".to_string(), "episode_return".to_string()];
    cols.extend((0..n_critics).map(|i| format!("mean_q_{i}")));
    cols.extend(
        [
            "cross_critic_q_std",
            "mean_pairwise_cka",
            "fwd_flops",
            "bwd_flops",
            "selected_indices",
        ]
        .map(String::from),
    );
    cols.join(",")
}

pub fn csv_line(row: &MetricsRow) -> String {
    let mut cols = vec![row.step.to_string(), fmt_sig9(row.episode_return)];
    cols.extend(row.mean_q_per_critic.iter().map(|&q| fmt_sig9(q)));
    cols.push(fmt_sig9(row.cross_critic_q_std));
    cols.push(fmt_sig9(row.mean_pairwise_cka));
    cols.push(row.fwd_flops.to_string());
    cols.push(row.bwd_flops.to_string());
    cols.push(
        row.selected
            .as_ref()
            .map(|s| {
                s.members()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default(),
    );
    cols.join(",")
}

pub fn write_csv<W: Write>(mut out: W, n_critics: usize, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{}", csv_header(n_critics))?;
    for row in rows {
        writeln!(out, "{}", csv_line(row))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-12.345678912345), "-12.3456789");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(123456789012.0), "1.23456789e+11");
        assert_eq!(fmt_sig9(2.5e-7), "2.5e-07");
        assert_eq!(fmt_sig9(999999999.7), "1e+09");
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            csv_header(2),
            "step,episode_return,mean_q_0,mean_q_1,cross_critic_q_std,mean_pairwise_cka,fwd_flops,bwd_flops,selected_indices"
        );
        let row = MetricsRow {
            step: 100,
            episode_return: -3.5,
            mean_q_per_critic: vec![-1.0, -2.0],
            cross_critic_q_std: 0.5,
            mean_pairwise_cka: 0.25,
            fwd_flops: 10,
            bwd_flops: 20,
            selected: Some(IndexSet::new(vec![0, 1]).unwrap()),
        };
        assert_eq!(csv_line(&row), "100,-3.5,-1,-2,0.5,0.25,10,20,0;1");
    }
}
