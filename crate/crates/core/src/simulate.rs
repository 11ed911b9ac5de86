//! Forward simulation from the mixture model with known ground truth.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, MixedDataset, VariableKind, VariableSpec};
use crate::distributions::{sample_categorical, sample_standard_normal};
use crate::error::{Error, Result};

/// One variable of a [`TrueModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueVariable {
    #[serde(flatten)]
    pub spec: VariableSpec,
    /// Planted non-discriminating variable.
    #[serde(default)]
    pub noise: bool,
    /// Per cluster, one mean per latent dimension of the variable.
    pub mean: Vec<Vec<f64>>,
    /// Per cluster, per latent dimension, `Q` loadings.
    pub loadings: Vec<Vec<Vec<f64>>>,
    /// Uniqueness of a continuous variable; categorical dimensions use 1.
    #[serde(default = "one")]
    pub psi: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueModel {
    pub factors: usize,
    pub pi: Vec<f64>,
    #[serde(rename = "variable")]
    pub variables: Vec<TrueVariable>,
}

impl TrueModel {
    pub fn groups(&self) -> usize {
        self.pi.len()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tm: TrueModel = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        tm.validate()?;
        Ok(tm)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("true model serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups();
        if g == 0 {
            return Err(Error::Config("pi must have at least one entry".into()));
        }
        if self.pi.iter().any(|&p| !(p > 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Config("pi must be positive and sum to 1".into()));
        }
        if self.factors == 0 {
            return Err(Error::Config("factors must be at least 1".into()));
        }
        if self.variables.is_empty() {
            return Err(Error::Config("no variables".into()));
        }
        crate::data::Schema::new(self.variables.iter().map(|v| v.spec.clone()).collect()).validate()?;
        for v in &self.variables {
            let w = v.spec.latent_width();
            let name = &v.spec.name;
            let bad = |what: &str| Error::Config(format!("variable `{name}`: {what}"));
            if v.mean.len() != g || v.mean.iter().any(|m| m.len() != w) {
                return Err(bad(&format!("mean must be {g} lists of {w} values")));
            }
            if v.loadings.len() != g
                || v.loadings
                    .iter()
                    .any(|l| l.len() != w || l.iter().any(|row| row.len() != self.factors))
            {
                return Err(bad(&format!(
                    "loadings must be {g} × {w} lists of {} values",
                    self.factors
                )));
            }
            if !(v.psi > 0.0) {
                return Err(bad("psi must be positive"));
            }
            if v.spec.is_categorical() && v.psi != 1.0 {
                return Err(bad("psi is fixed at 1 for categorical variables"));
            }
            if v.noise
                && (v.loadings.iter().flatten().flatten().any(|&x| x != 0.0) || v.mean.iter().any(|m| m != &v.mean[0]))
            {
                return Err(bad("noise variables need zero loadings and equal means"));
            }
        }
        Ok(())
    }
}

/// A simulated dataset with its ground truth. Latent quantities are in the
/// dataset's canonical variable order.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub dataset: MixedDataset,
    pub alloc: Vec<usize>,
    /// `Q × N`.
    pub theta: DMatrix<f64>,
    /// `D × N`.
    pub z: DMatrix<f64>,
    /// Names of the planted noise variables.
    pub noise_variables: Vec<String>,
}

impl Simulated {
    pub fn discriminating_variables(&self) -> Vec<String> {
        self.dataset
            .variables()
            .iter()
            .filter(|v| !self.noise_variables.contains(&v.name))
            .map(|v| v.name.clone())
            .collect()
    }
}

/// Response implied by one categorical cell's latent values.
pub fn response_of(z: &[f64]) -> u32 {
    if z.len() == 1 {
        return (z[0] > 0.0) as u32;
    }
    let (arg, max) = z.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(ba, bm), (k, &v)| if v > bm { (k, v) } else { (ba, bm) },
    );
    if max > 0.0 {
        arg as u32 + 1
    } else {
        0
    }
}

/// Draws `n` observations: allocation, traits, latent data, then responses.
pub fn generate<R: Rng + ?Sized>(tm: &TrueModel, n: usize, rng: &mut R) -> Result<Simulated> {
    tm.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset { dropped: 0 });
    }
    let q = tm.factors;
    let alloc: Vec<usize> = (0..n).map(|_| sample_categorical(&tm.pi, rng)).collect::<Result<_>>()?;
    let theta = DMatrix::from_fn(q, n, |_, _| sample_standard_normal(rng));

    // Generated in model order, then permuted into canonical order.
    let mut latents: Vec<Vec<Vec<f64>>> = Vec::with_capacity(tm.variables.len());
    let mut columns = Vec::with_capacity(tm.variables.len());
    for v in &tm.variables {
        let w = v.spec.latent_width();
        let sd = v.psi.sqrt();
        let mut z = vec![vec![0.0; n]; w];
        for i in 0..n {
            let g = alloc[i];
            for (k, row) in z.iter_mut().enumerate() {
                let mut m = v.mean[g][k];
                for f in 0..q {
                    m += v.loadings[g][k][f] * theta[(f, i)];
                }
                row[i] = m + sd * sample_standard_normal(rng);
            }
        }
        columns.push(match v.spec.kind {
            VariableKind::Continuous => ColumnData::Continuous(z[0].clone()),
            _ => ColumnData::Codes(
                (0..n)
                    .map(|i| response_of(&z.iter().map(|row| row[i]).collect::<Vec<_>>()))
                    .collect(),
            ),
        });
        latents.push(z);
    }
    let ids = (1..=n).map(|i| format!("s{i:04}")).collect();
    let dataset = MixedDataset::new(
        tm.variables.iter().map(|v| v.spec.clone()).collect(),
        columns,
        Some(ids),
    )?;

    let layout = dataset.layout();
    let mut z = DMatrix::zeros(layout.dim(), n);
    for (v, lat) in tm.variables.iter().zip(&latents) {
        let j = dataset.variable_index(&v.spec.name).expect("variable present");
        for (k, row) in lat.iter().enumerate() {
            let d = layout.slot(j).offset + k;
            for i in 0..n {
                z[(d, i)] = row[i];
            }
        }
    }
    Ok(Simulated {
        dataset,
        alloc,
        theta,
        z,
        noise_variables: tm
            .variables
            .iter()
            .filter(|v| v.noise)
            .map(|v| v.spec.name.clone())
            .collect(),
    })
}

/// Default recovery scenario: two equally likely clusters, two factors,
/// 5 continuous, 5 binary and 3 three-level nominal discriminating
/// variables, and 4 continuous, 3 binary and 3 nominal noise variables.
/// Discriminating continuous means sit at ±1.5.
pub fn recovery_scenario() -> TrueModel {
    let q = 2;
    // Fixed loadings patterns, different in each cluster.
    let pattern = |k: usize, g: usize| -> Vec<f64> {
        let a = 0.3 + 0.1 * ((k + g) % 4) as f64;
        let b = if (k + 2 * g).is_multiple_of(3) { -0.4 } else { 0.3 };
        vec![a, b]
    };
    let mut variables = Vec::new();
    let discriminating = |spec: VariableSpec, means: [Vec<f64>; 2], k: usize| {
        let w = spec.latent_width();
        TrueVariable {
            spec,
            noise: false,
            mean: means.to_vec(),
            loadings: (0..2).map(|g| (0..w).map(|c| pattern(k + c, g)).collect()).collect(),
            psi: 1.0,
        }
    };
    let noise = |spec: VariableSpec, mean: Vec<f64>| {
        let w = spec.latent_width();
        TrueVariable {
            spec,
            noise: true,
            mean: vec![mean.clone(), mean],
            loadings: vec![vec![vec![0.0; q]; w]; 2],
            psi: 1.0,
        }
    };
    let levels = ["a", "b", "c"];
    for k in 0..5 {
        let s = if k % 2 == 0 { 1.5 } else { -1.5 };
        variables.push(discriminating(
            VariableSpec::continuous(format!("x{}", k + 1)),
            [vec![-s], vec![s]],
            k,
        ));
    }
    for k in 0..5 {
        let s = if k % 2 == 0 { 1.2 } else { -1.2 };
        variables.push(discriminating(
            VariableSpec::binary(format!("b{}", k + 1), ["0", "1"]),
            [vec![-s], vec![s]],
            k + 5,
        ));
    }
    for k in 0..3 {
        let (m1, m2) = if k % 2 == 0 {
            (vec![1.0, -1.0], vec![-1.0, 1.0])
        } else {
            (vec![-1.0, 1.0], vec![1.0, -1.0])
        };
        variables.push(discriminating(
            VariableSpec::nominal(format!("n{}", k + 1), &levels),
            [m1, m2],
            k + 10,
        ));
    }
    for k in 0..4 {
        variables.push(noise(VariableSpec::continuous(format!("xn{}", k + 1)), vec![0.0]));
    }
    for k in 0..3 {
        variables.push(noise(
            VariableSpec::binary(format!("bn{}", k + 1), ["0", "1"]),
            vec![0.2 * k as f64 - 0.2],
        ));
    }
    for k in 0..3 {
        variables.push(noise(
            VariableSpec::nominal(format!("nn{}", k + 1), &levels),
            vec![0.1 * k as f64, -0.3],
        ));
    }
    TrueModel {
        factors: q,
        pi: vec![0.5, 0.5],
        variables,
    }
}

/// Observations in the default recovery scenario.
pub const RECOVERY_N: usize = 300;

/// Truth sidecar: `id, cluster, theta_1..theta_Q` with 1-based clusters.
pub fn write_truth<W: Write>(sim: &Simulated, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let q = sim.theta.nrows();
    let mut header = vec!["id".to_string(), "cluster".to_string()];
    header.extend((1..=q).map(|k| format!("theta_{k}")));
    out.write_record(&header)?;
    for (i, id) in sim.dataset.row_ids().iter().enumerate() {
        let mut row = vec![id.clone(), (sim.alloc[i] + 1).to_string()];
        row.extend((0..q).map(|k| sim.theta[(k, i)].to_string()));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
