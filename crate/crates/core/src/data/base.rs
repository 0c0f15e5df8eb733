use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{column, parse_err, parse_label, GroupBase};
use crate::error::{Error, Result};

/// A numeric feature table. `id`, `group` and `label` are reserved column
/// names; every other column must be numeric.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub groups: Option<Vec<usize>>,
    /// `None` when the file has no label column.
    pub labels: Option<Vec<Option<u8>>>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn from_reader<R: Read>(reader: R, path: &str, base: GroupBase) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .clone();
        let (ii, gi, li) = (
            column(&headers, "id"),
            column(&headers, "group"),
            column(&headers, "label"),
        );
        let feat: Vec<usize> = (0..headers.len())
            .filter(|i| ![ii, gi, li].contains(&Some(*i)))
            .collect();
        let mut t = FeatureTable {
            ids: Vec::new(),
            groups: gi.map(|_| Vec::new()),
            labels: li.map(|_| Vec::new()),
            names: feat
                .iter()
                .map(|&i| headers[i].trim().to_string())
                .collect(),
            rows: Vec::new(),
        };
        for (r, rec) in rdr.records().enumerate() {
            let row = r + 2;
            let rec = rec.map_err(|e| parse_err(path, row, e.to_string()))?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            t.ids
                .push(ii.map_or_else(|| (row - 1).to_string(), |i| get(i).to_string()));
            if let (Some(i), Some(g)) = (gi, t.groups.as_mut()) {
                g.push(base.to_index(get(i)).map_err(|e| parse_err(path, row, e))?);
            }
            if let (Some(i), Some(l)) = (li, t.labels.as_mut()) {
                l.push(parse_label(get(i)).map_err(|e| parse_err(path, row, e))?);
            }
            let mut x = Vec::with_capacity(feat.len());
            for (j, &i) in feat.iter().enumerate() {
                match get(i).parse::<f64>() {
                    Ok(v) if v.is_finite() => x.push(v),
                    _ => {
                        return Err(Error::NonNumericFeature {
                            column: t.names[j].clone(),
                            row,
                        })
                    }
                }
            }
            t.rows.push(x);
        }
        Ok(t)
    }

    pub fn read(path: &Path, base: GroupBase) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(
            std::io::BufReader::new(f),
            &path.display().to_string(),
            base,
        )
    }

    fn num_groups(&self) -> usize {
        self.groups
            .as_ref()
            .map_or(0, |g| g.iter().map(|&s| s + 1).max().unwrap_or(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            l2: 1e-4,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

/// Logistic scorer over standardized features plus a one-hot group term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub features: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    /// One weight per group; empty when trained without groups.
    pub group_weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl BaseModel {
    fn design(&self, t: &FeatureTable) -> Result<Vec<Vec<f64>>> {
        let cols: Vec<usize> = self
            .features
            .iter()
            .map(|f| {
                t.names
                    .iter()
                    .position(|n| n == f)
                    .ok_or_else(|| Error::Model(format!("feature column '{f}' is missing")))
            })
            .collect::<Result<_>>()?;
        let k = self.group_weights.len();
        if k > 0 && t.groups.is_none() {
            return Err(Error::Model(
                "the model uses groups but the table has no group column".into(),
            ));
        }
        let mut out = Vec::with_capacity(t.rows.len());
        for (r, row) in t.rows.iter().enumerate() {
            let mut z: Vec<f64> = cols
                .iter()
                .enumerate()
                .map(|(j, &c)| (row[c] - self.mean[j]) / self.scale[j])
                .collect();
            if k > 0 {
                let g = t.groups.as_ref().unwrap()[r];
                if g >= k {
                    return Err(Error::GroupOutOfRange { group: g, k });
                }
                z.extend((0..k).map(|s| f64::from(u8::from(s == g))));
            }
            out.push(z);
        }
        Ok(out)
    }

    /// Scores clipped to `[0, 1]`.
    pub fn score(&self, t: &FeatureTable) -> Result<Vec<f64>> {
        let w: Vec<f64> = self
            .weights
            .iter()
            .chain(&self.group_weights)
            .cloned()
            .collect();
        Ok(self
            .design(t)?
            .iter()
            .map(|z| sigmoid(dot(&w, z) + self.bias).clamp(0.0, 1.0))
            .collect())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch gradient descent on the L2-penalized logistic loss (the bias is
/// not penalized), from zero, with step `1/L` for the usual smoothness
/// constant. Deterministic.
pub fn train_base(t: &FeatureTable, opts: &TrainOptions) -> Result<BaseModel> {
    let Some(labels) = &t.labels else {
        return Err(Error::NoLabelColumn);
    };
    let y: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.map(f64::from).ok_or_else(|| Error::Parse {
                path: "training data".into(),
                row: i + 2,
                reason: "label is missing".into(),
            })
        })
        .collect::<Result<_>>()?;
    let n = t.rows.len();
    if n == 0 {
        return Err(Error::config("train", "no rows"));
    }
    let d = t.names.len();
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        mean[j] = t.rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = t.rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
        scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let k = t.num_groups();
    let mut model = BaseModel {
        features: t.names.clone(),
        mean,
        scale,
        weights: vec![0.0; d],
        group_weights: vec![0.0; k],
        bias: 0.0,
        iterations: 0,
        grad_norm: f64::INFINITY,
    };
    let z = model.design(t)?;
    let dim = d + k;
    let max_sq = z.iter().map(|r| dot(r, r)).fold(0.0, f64::max);
    let step = 1.0 / (0.25 * (max_sq + 1.0) + opts.l2);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut gw = vec![0.0; dim];
    for it in 0..=opts.max_iter {
        gw.iter_mut()
            .enumerate()
            .for_each(|(j, g)| *g = opts.l2 * w[j]);
        let mut gb = 0.0;
        for (zi, yi) in z.iter().zip(&y) {
            let r = (sigmoid(dot(&w, zi) + b) - yi) / n as f64;
            gb += r;
            for (g, x) in gw.iter_mut().zip(zi) {
                *g += r * x;
            }
        }
        let norm = (dot(&gw, &gw) + gb * gb).sqrt();
        model.iterations = it;
        model.grad_norm = norm;
        if norm < opts.tol || it == opts.max_iter {
            break;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= step * g;
        }
        b -= step * gb;
    }
    model.weights = w[..d].to_vec();
    model.group_weights = w[d..].to_vec();
    model.bias = b;
    Ok(model)
}
