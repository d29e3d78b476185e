//! Edges, quantiles and density of the limiting law, as CSV.

use std::path::Path;

use serde::Serialize;

use super::write_records;
use crate::error::Result;
use crate::harness::ExperimentConfig;
use crate::mp_law::{MpLaw, MpLawTable};

/// Density points per bulk, edges included.
const DENSITY_POINTS: usize = 201;

#[derive(Debug, Clone, Serialize)]
pub struct MpDumpSummary {
    pub p: usize,
    pub n: usize,
    /// Descending `[a_1, a_2, ...]`.
    pub edges: Vec<f64>,
    pub bulk_counts: Vec<usize>,
    pub zero_atom_mass: f64,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct EdgeRow {
    bulk: usize,
    upper: f64,
    lower: f64,
    count: usize,
    mass: f64,
}

#[derive(Serialize)]
struct QuantileRow {
    k: usize,
    gamma: f64,
}

#[derive(Serialize)]
struct DensityRow {
    bulk: usize,
    x: f64,
    density: f64,
}

/// Writes `edges.csv`, `quantiles.csv` and `density.csv` for `table` into
/// `dir`. Output is a pure function of the table.
pub fn write_mp_dump(table: &MpLawTable, dir: &Path) -> Result<MpDumpSummary> {
    std::fs::create_dir_all(dir)?;
    let edges = table.edges();
    let edge_rows = table.bulks().iter().enumerate().map(|(k, b)| EdgeRow {
        bulk: k + 1,
        upper: b.upper,
        lower: b.lower,
        count: b.count,
        mass: b.mass,
    });
    let edges_path = write_records(&dir.join("edges.csv"), edge_rows)?;
    let quantile_rows = table
        .quantiles()
        .iter()
        .enumerate()
        .map(|(k, &g)| QuantileRow { k: k + 1, gamma: g });
    let quantiles_path = write_records(&dir.join("quantiles.csv"), quantile_rows)?;
    let mut density_rows = Vec::with_capacity(DENSITY_POINTS * edges.bulks());
    for (k, b) in table.bulks().iter().enumerate() {
        let step = (b.upper - b.lower) / (DENSITY_POINTS - 1) as f64;
        for t in 0..DENSITY_POINTS {
            let x = if t + 1 == DENSITY_POINTS {
                b.upper
            } else {
                b.lower + step * t as f64
            };
            density_rows.push(DensityRow {
                bulk: k + 1,
                x,
                density: table.density(x)?,
            });
        }
    }
    let density_path = write_records(&dir.join("density.csv"), density_rows)?;
    Ok(MpDumpSummary {
        p: table.law().p(),
        n: table.law().n(),
        edges: edges.edges.clone(),
        bulk_counts: edges.bulk_counts.clone(),
        zero_atom_mass: table.zero_atom_mass(),
        files: [edges_path, quantiles_path, density_path]
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    })
}

/// Law of the non-spiked spectrum of the configured model.
pub fn run_mp_dump(cfg: &ExperimentConfig, dir: &Path) -> Result<MpDumpSummary> {
    let model = cfg.build_base_model()?;
    let table = MpLawTable::build(MpLaw::new(model.base()))?;
    write_mp_dump(&table, dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentKind, ModelSpec};

    #[test]
    fn identity_dump_is_deterministic() {
        let cfg = ExperimentConfig::new(ExperimentKind::MpDump, ModelSpec::Identity);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_mp_dump(&cfg, a.path()).unwrap();
        run_mp_dump(&cfg, b.path()).unwrap();
        for f in ["edges.csv", "quantiles.csv", "density.csv"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
        assert!((sa.edges[0] - 2.914213562373095).abs() < 1e-9);
        let edges = std::fs::read_to_string(a.path().join("edges.csv")).unwrap();
        assert!(edges.starts_with("bulk,upper,lower,count,mass\n1,2.91421"));
        assert!(edges.contains(",0.08578"));
    }
}
