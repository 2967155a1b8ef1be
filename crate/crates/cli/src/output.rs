use std::path::Path;

use anyhow::Result;
use nalgebra::DMatrix;

use olqr_core::bench::SweepRow;
use olqr_core::riccati::ProbeTable;
use olqr_core::simulate::RegretTrace;

pub fn print_matrix(m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:>12.6}", m[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &RegretTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "cost", "cumcost", "regret", "phase"])?;
    let t0 = trace.phases.first().map_or(1, |p| p.start);
    for i in 0..trace.len() {
        w.write_record([
            (t0 + i).to_string(),
            format!("{:e}", trace.costs[i]),
            format!("{:e}", trace.cumulative_cost[i]),
            format!("{:e}", trace.regret[i]),
            trace.phase_at(i).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "T",
        "seed",
        "final_regret",
        "stabilized",
        "eps_cov",
        "eps_op",
        "explore_regret",
        "commit_regret",
        "j_gap",
        "t_exp",
        "dare_failed",
    ])?;
    for r in rows {
        w.write_record([
            r.horizon.to_string(),
            r.seed.to_string(),
            format!("{:e}", r.final_regret),
            r.stabilized.to_string(),
            format!("{:e}", r.eps_cov),
            format!("{:e}", r.eps_op),
            format!("{:e}", r.explore_regret),
            format!("{:e}", r.commit_regret),
            format!("{:e}", r.j_gap),
            r.t_exp.to_string(),
            r.dare_failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_probe(path: &Path, table: &ProbeTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eps", "seed", "gap", "eps_op", "eps_cov", "within_c_stable", "stabilized"])?;
    for r in &table.rows {
        w.write_record([
            format!("{:e}", r.eps),
            r.seed.to_string(),
            format!("{:e}", r.gap),
            format!("{:e}", r.eps_op),
            format!("{:e}", r.eps_cov),
            r.within_c_stable.to_string(),
            r.stabilized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
