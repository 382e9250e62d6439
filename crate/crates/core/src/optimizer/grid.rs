//! Axisymmetric permittivity map of one unit cell.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `n_r × n_z` ring cells over a cylinder of radius `R` and height `h`.
///
/// Values are stored radial-major: cell `(i, j)` is at `i·n_z + j`, `i`
/// counting outwards from the axis and `j` upwards from `−h/2`. The innermost
/// `frozen_radial` columns are held at vacuum so that the qubits on the axis
/// always sit outside the dielectric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    n_r: usize,
    n_z: usize,
    radius: f64,
    height: f64,
    eps_max: f64,
    iteration: usize,
    frozen_radial: usize,
    values: Vec<f64>,
}

const MAGIC: &str = "# topocavity design grid";

impl DesignGrid {
    pub fn vacuum(n_r: usize, n_z: usize, radius: f64, height: f64, eps_max: f64) -> Result<Self> {
        if n_r == 0 || n_z == 0 {
            return Err(Error::Invalid("design grid needs at least one cell per axis".into()));
        }
        if !(radius > 0.0 && height > 0.0) {
            return Err(Error::Invalid("design grid extent must be positive".into()));
        }
        if !(eps_max >= 1.0) {
            return Err(Error::Invalid(format!("eps_max {eps_max} below 1")));
        }
        Ok(DesignGrid {
            n_r,
            n_z,
            radius,
            height,
            eps_max,
            iteration: 0,
            frozen_radial: 1.min(n_r - 1),
            values: vec![1.0; n_r * n_z],
        })
    }

    /// Vacuum grid whose cells are close to `pitch` on both axes.
    pub fn for_pitch(radius: f64, height: f64, pitch: f64, eps_max: f64) -> Result<Self> {
        let n_r = ((radius / pitch).round() as usize).max(1);
        let n_z = ((height / pitch).round() as usize).max(1);
        Self::vacuum(n_r, n_z, radius, height, eps_max)
    }

    pub fn with_frozen_radial(mut self, columns: usize) -> Result<Self> {
        if columns >= self.n_r {
            return Err(Error::Invalid("cannot freeze every radial column".into()));
        }
        for i in 0..columns {
            for j in 0..self.n_z {
                self.values[i * self.n_z + j] = 1.0;
            }
        }
        self.frozen_radial = columns;
        Ok(self)
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn n_z(&self) -> usize {
        self.n_z
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn height(&self) -> f64 {
        self.height
    }
    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }
    pub fn iteration(&self) -> usize {
        self.iteration
    }
    pub fn frozen_radial(&self) -> usize {
        self.frozen_radial
    }
    pub fn radial_step(&self) -> f64 {
        self.radius / self.n_r as f64
    }
    pub fn axial_step(&self) -> f64 {
        self.height / self.n_z as f64
    }
    pub fn cell_count(&self) -> usize {
        self.values.len()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set_iteration(&mut self, k: usize) {
        self.iteration = k;
    }

    /// Whether cell `idx` may be modified by the optimiser.
    pub fn is_design_cell(&self, idx: usize) -> bool {
        idx / self.n_z >= self.frozen_radial
    }

    pub fn design_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(move |&i| self.is_design_cell(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_z + j]
    }

    pub fn set(&mut self, idx: usize, eps: f64) -> Result<()> {
        if idx >= self.values.len() {
            return Err(Error::Invalid(format!("cell {idx} outside the grid")));
        }
        if !self.is_design_cell(idx) && eps != 1.0 {
            return Err(Error::Invalid(format!("cell {idx} is frozen at vacuum")));
        }
        if !(1.0..=self.eps_max).contains(&eps) {
            return Err(Error::Invalid(format!(
                "permittivity {eps} outside [1, {}]",
                self.eps_max
            )));
        }
        self.values[idx] = eps;
        Ok(())
    }

    /// Mirror image under `z → −z` about the cell centre.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_r {
            for j in 0..self.n_z {
                out.values[i * self.n_z + j] = self.values[i * self.n_z + (self.n_z - 1 - j)];
            }
        }
        out
    }

    /// Text snapshot: `#` comment lines (including `extra_comments`), a
    /// key-value header and `n_r` rows of `n_z` values. Values are written in
    /// shortest round-trip form, so parsing restores the grid bit for bit.
    pub fn to_text(&self, extra_comments: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        for c in extra_comments {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(s, "n_r {}", self.n_r);
        let _ = writeln!(s, "n_z {}", self.n_z);
        let _ = writeln!(s, "radius_nm {}", self.radius);
        let _ = writeln!(s, "height_nm {}", self.height);
        let _ = writeln!(s, "eps_max {}", self.eps_max);
        let _ = writeln!(s, "iteration {}", self.iteration);
        let _ = writeln!(s, "frozen_radial {}", self.frozen_radial);
        let _ = writeln!(s, "values");
        for row in self.values.chunks(self.n_z) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut header = std::collections::HashMap::new();
        for line in lines.by_ref() {
            if line == "values" {
                break;
            }
            let (k, v) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Parse(format!("malformed header line `{line}`")))?;
            header.insert(k.to_string(), v.trim().to_string());
        }
        let field = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| Error::Parse(format!("missing header field `{k}`")))
        };
        let int = |k: &str| -> Result<usize> {
            field(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let float = |k: &str| -> Result<f64> {
            field(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let mut grid = DesignGrid::vacuum(
            int("n_r")?,
            int("n_z")?,
            float("radius_nm")?,
            float("height_nm")?,
            float("eps_max")?,
        )?;
        grid.iteration = int("iteration")?;
        grid.frozen_radial = int("frozen_radial")?;
        let values: Vec<f64> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("value `{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != grid.values.len() {
            return Err(Error::Parse(format!(
                "expected {} values, found {}",
                grid.values.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(1.0..=grid.eps_max).contains(*v)) {
            return Err(Error::Parse(format!("permittivity {v} outside [1, {}]", grid.eps_max)));
        }
        grid.values = values;
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let mut g = DesignGrid::vacuum(3, 4, 716.0, 716.0, 4.0).unwrap();
        g.set(5, 1.0 + 0.1 + 0.2).unwrap();
        g.set(11, 4.0).unwrap();
        g.set_iteration(17);
        let text = g.to_text(&["config_hash abc".into()]);
        assert_eq!(DesignGrid::from_text(&text).unwrap(), g);
    }

    #[test]
    fn bounds_are_enforced() {
        let mut g = DesignGrid::vacuum(3, 2, 1.0, 1.0, 4.0).unwrap();
        assert!(g.set(4, 4.5).is_err());
        assert!(g.set(4, 0.9).is_err());
        assert!(g.set(0, 2.0).is_err(), "axis column is frozen");
        assert!(g.set(0, 1.0).is_ok());
    }

    #[test]
    fn malformed_snapshot_is_rejected() {
        assert!(DesignGrid::from_text("n_r 2\nvalues\n1 1").is_err());
        let g = DesignGrid::vacuum(2, 2, 1.0, 1.0, 4.0).unwrap();
        let bad = g.to_text(&[]).replace("values\n1 1\n1 1", "values\n1 1\n1 7");
        assert!(DesignGrid::from_text(&bad).is_err());
    }

    #[test]
    fn mirror_is_an_involution() {
        let mut g = DesignGrid::vacuum(3, 5, 1.0, 1.0, 4.0).unwrap();
        g.set(6, 2.0).unwrap();
        g.set(13, 3.0).unwrap();
        assert_eq!(g.mirrored().mirrored(), g);
        assert_eq!(g.mirrored().get(1, 3), g.get(1, 1));
    }
}
