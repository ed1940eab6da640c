//! CSV tables for external plotting.

use std::io::Write;

use constraint_forge::solve::{KernelReport, Projection};
use constraint_forge::verify::OperatorReport;

pub type CsvResult = Result<(), csv::Error>;

/// `iteration,residual,step,krylov_iterations`; iteration 0 is the start point.
pub fn residual_table<W: Write>(out: W, projection: &Projection) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "residual", "step", "krylov_iterations"])?;
    for (i, r) in projection.residual_history.iter().enumerate() {
        let step = if i == 0 { String::new() } else { projection.step_sizes[i - 1].to_string() };
        let kry = if i == 0 { String::new() } else { projection.krylov_iterations[i - 1].to_string() };
        w.write_record([i.to_string(), r.to_string(), step, kry])?;
    }
    w.flush()?;
    Ok(())
}

/// The `(x, y)` curve of a report, e.g. difference error against step size.
pub fn curve_table<W: Write>(out: W, report: &OperatorReport) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y"])?;
    for [x, y] in &report.curve {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `index,sigma,relative` with singular values ascending.
pub fn singular_table<W: Write>(out: W, report: &KernelReport) -> CsvResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "sigma", "relative"])?;
    for (i, s) in report.singular_values.iter().enumerate() {
        let rel = if report.sigma_max > 0.0 { s / report.sigma_max } else { 0.0 };
        w.write_record([i.to_string(), s.to_string(), rel.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use constraint_forge::solve::SvdMethod;

    #[test]
    fn empty_reports_give_header_only() {
        let k = KernelReport {
            singular_values: vec![],
            kernel_dim: 0,
            basis: vec![],
            gap_ratio: f64::INFINITY,
            sigma_max: 0.0,
            threshold: 1e-8,
            method: SvdMethod::Dense,
            basis_residuals: vec![],
        };
        let mut buf = Vec::new();
        singular_table(&mut buf, &k).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,sigma,relative\n");
    }
}
