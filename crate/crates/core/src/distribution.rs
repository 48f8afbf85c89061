//! The signal-plus-noise data model.
//!
//! Every sample is `(x1, x2, y)` with `y` uniform on `{-1, +1}`,
//! `x1 = y * u` for a fixed signal vector `u in R^K`, and
//! `x2 ~ N(0, sigma^2 I_D)`. Datasets are a pure function of
//! `(spec, n, seed)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv;
use crate::rng::{derive_seed, rng_from_seed};

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    /// Class index used by two-logit networks: `-1 -> 0`, `+1 -> 1`.
    pub fn class_index(self) -> usize {
        match self {
            Label::Neg => 0,
            Label::Pos => 1,
        }
    }

    pub fn from_class_index(c: usize) -> Option<Label> {
        match c {
            0 => Some(Label::Neg),
            1 => Some(Label::Pos),
            _ => None,
        }
    }

    pub fn from_sign(s: i64) -> Option<Label> {
        match s {
            -1 => Some(Label::Neg),
            1 => Some(Label::Pos),
            _ => None,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSpec {
    /// Signal vector `u`; its length is `K`.
    pub u: Vec<f64>,
    /// Noise dimension `D`.
    pub noise_dim: usize,
    /// Per-coordinate noise standard deviation.
    pub sigma: f64,
    /// Nominal dataset size `m` (the victim's `|S_V|`).
    pub m: usize,
}

impl DistributionSpec {
    pub fn new(u: Vec<f64>, noise_dim: usize, sigma: f64, m: usize) -> Result<Self> {
        let spec = DistributionSpec {
            u,
            noise_dim,
            sigma,
            m,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec inside the bounded-signal subspace: `u = e1 / sqrt(m)`, padded to `k`.
    pub fn bounded_signal(k: usize, noise_dim: usize, sigma: f64, m: usize) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::Spec("K and m must be at least 1".into()));
        }
        let mut u = vec![0.0; k];
        u[0] = 1.0 / (m as f64).sqrt();
        Self::new(u, noise_dim, sigma, m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.is_empty() {
            return Err(Error::Spec("signal dimension K must be >= 1".into()));
        }
        if self.noise_dim == 0 {
            return Err(Error::Spec("noise dimension D must be >= 1".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Spec(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.m == 0 {
            return Err(Error::Spec("dataset size m must be >= 1".into()));
        }
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("u has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.u.len()
    }

    pub fn input_dim(&self) -> usize {
        self.k() + self.noise_dim
    }

    pub fn u_norm_sq(&self) -> f64 {
        self.u.iter().map(|v| v * v).sum()
    }

    /// `||u|| <= 1/sqrt(m)` and `sigma^2 > 1/(10 sqrt(m))`.
    pub fn in_bounded_signal_subspace(&self) -> bool {
        let sm = (self.m as f64).sqrt();
        self.u_norm_sq().sqrt() <= 1.0 / sm + 1e-15 && self.sigma * self.sigma > 1.0 / (10.0 * sm)
    }

    /// Expected margin gap `D sigma^2` between training and fresh samples.
    pub fn margin_gap(&self) -> f64 {
        self.noise_dim as f64 * self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Stable identifier; walk directions are keyed on it.
    pub id: u64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: Label,
}

impl LabeledSample {
    pub fn new(id: u64, u: &[f64], x2: Vec<f64>, y: Label) -> Self {
        let s = y.sign();
        LabeledSample {
            id,
            x1: u.iter().map(|v| s * v).collect(),
            x2,
            y,
        }
    }

    /// Concatenated input `(x1, x2)`.
    pub fn input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.x1.len() + self.x2.len());
        x.extend_from_slice(&self.x1);
        x.extend_from_slice(&self.x2);
        x
    }
}

/// Where a dataset plays in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Victim's private data.
    Private,
    /// Public data.
    Public,
    /// Independent third party's data.
    Independent,
    Custom,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Private => "S_V",
            Provenance::Public => "S_0",
            Provenance::Independent => "S_I",
            Provenance::Custom => "custom",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S_V" => Ok(Provenance::Private),
            "S_0" => Ok(Provenance::Public),
            "S_I" => Ok(Provenance::Independent),
            "custom" => Ok(Provenance::Custom),
            other => Err(Error::Format(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DistributionSpec,
    pub samples: Vec<LabeledSample>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Row-major input matrix, one `(x1, x2)` row per sample.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(LabeledSample::input).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Sub-dataset with the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance,
            seed: self.seed,
        }
    }

    /// Seeded uniform `k`-subset without replacement.
    pub fn random_subset(&self, k: usize, seed: u64) -> Result<Dataset> {
        if k > self.len() {
            return Err(Error::Config(format!(
                "subset of {k} requested from dataset of {}",
                self.len()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let idx = rand::seq::index::sample(&mut rng, self.len(), k).into_vec();
        Ok(self.select(&idx))
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.spec.input_dim() != other.spec.input_dim() {
            return Err(Error::Shape {
                expected: self.spec.input_dim(),
                got: other.spec.input_dim(),
            });
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Ok(Dataset {
            spec: self.spec.clone(),
            samples,
            provenance: self.provenance,
            seed: self.seed,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.spec.k();
        let d = self.spec.noise_dim;
        let mut header = String::from("y");
        for i in 0..k {
            header.push_str(&format!(",x1_{i}"));
        }
        for i in 0..d {
            header.push_str(&format!(",x2_{i}"));
        }
        writeln!(w, "{header}")?;
        for s in &self.samples {
            let y = if s.y == Label::Pos { "1" } else { "-1" };
            writeln!(w, "{y},{},{}", kv::join_f64(&s.x1), kv::join_f64(&s.x2))?;
        }
        Ok(())
    }

    /// Sidecar block: `k`, `d`, `sigma`, `m`, `u`, `seed`, `provenance`.
    pub fn sidecar(&self) -> String {
        format!(
            "k = {}\nd = {}\nsigma = {}\nm = {}\nu = \"{}\"\nseed = \"{}\"\nprovenance = \"{}\"\n",
            self.spec.k(),
            self.spec.noise_dim,
            fmt_float(self.spec.sigma),
            self.spec.m,
            kv::join_f64(&self.spec.u),
            self.seed,
            self.provenance
        )
    }

    /// Writes `<stem>.csv` and `<stem>.toml`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        std::fs::write(dir.join(format!("{stem}.toml")), self.sidecar())?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Dataset> {
        let side = std::fs::read_to_string(dir.join(format!("{stem}.toml")))?;
        let f = std::fs::File::open(dir.join(format!("{stem}.csv")))?;
        Dataset::read(&side, std::io::BufReader::new(f))
    }

    pub fn read<R: BufRead>(sidecar: &str, r: R) -> Result<Dataset> {
        let (spec, seed, provenance) = parse_sidecar(sidecar)?;
        let k = spec.k();
        let d = spec.noise_dim;
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset CSV".into()))??;
        if header.split(',').count() != 1 + k + d {
            return Err(Error::Format(format!(
                "header has {} columns, expected {}",
                header.split(',').count(),
                1 + k + d
            )));
        }
        let mut samples = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = kv::parse_f64_list(&line)?;
            if vals.len() != 1 + k + d {
                return Err(Error::Shape {
                    expected: 1 + k + d,
                    got: vals.len(),
                });
            }
            let y = Label::from_sign(vals[0] as i64)
                .filter(|_| vals[0].fract() == 0.0)
                .ok_or_else(|| Error::Format(format!("row {row}: bad label {}", vals[0])))?;
            samples.push(LabeledSample {
                id: derive_seed(seed, row as u64),
                x1: vals[1..1 + k].to_vec(),
                x2: vals[1 + k..].to_vec(),
                y,
            });
        }
        Ok(Dataset {
            spec,
            samples,
            provenance,
            seed,
        })
    }
}

fn fmt_float(v: f64) -> String {
    let s = v.to_string();
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn parse_sidecar(text: &str) -> Result<(DistributionSpec, u64, Provenance)> {
    let t = kv::parse_table(text)?;
    let k = kv::table_u64(&t, "k")? as usize;
    let d = kv::table_u64(&t, "d")? as usize;
    let sigma = kv::table_f64(&t, "sigma")?;
    let m = kv::table_u64(&t, "m")? as usize;
    let u = kv::parse_f64_list(kv::table_str(&t, "u")?)?;
    if u.len() != k {
        return Err(Error::Shape {
            expected: k,
            got: u.len(),
        });
    }
    let seed = kv::table_u64(&t, "seed")?;
    let provenance = match t.get("provenance") {
        Some(_) => kv::table_str(&t, "provenance")?.parse()?,
        None => Provenance::Custom,
    };
    Ok((DistributionSpec::new(u, d, sigma, m)?, seed, provenance))
}

/// Draws `n` i.i.d. samples. Labels are uniform on `{-1, +1}`.
pub fn sample_dataset(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Dataset> {
    sample_with(spec, n, seed, false)
}

/// Like [`sample_dataset`] but with exactly `floor(n/2)` / `ceil(n/2)`
/// labels, randomly ordered.
pub fn sample_balanced(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Dataset> {
    sample_with(spec, n, seed, true)
}

fn sample_with(spec: &DistributionSpec, n: usize, seed: u64, balanced: bool) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Spec("cannot sample an empty dataset".into()));
    }
    let mut rng = rng_from_seed(seed);
    let labels: Vec<Label> = if balanced {
        let mut l: Vec<Label> = (0..n)
            .map(|i| if i < n / 2 { Label::Pos } else { Label::Neg })
            .collect();
        if n % 2 == 1 && rng.gen::<bool>() {
            l[n - 1] = Label::Pos;
            l[0] = Label::Neg;
        }
        l.shuffle(&mut rng);
        l
    } else {
        (0..n)
            .map(|_| if rng.gen::<bool>() { Label::Pos } else { Label::Neg })
            .collect()
    };
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, y)| {
            let x2: Vec<f64> = (0..spec.noise_dim)
                .map(|_| spec.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            LabeledSample::new(derive_seed(seed, i as u64), &spec.u, x2, y)
        })
        .collect();
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        provenance: Provenance::Custom,
        seed,
    })
}

/// Seeded disjoint partition of `d` into parts of the given fractions.
///
/// Part sizes are `floor(f_i * n)` with the remainder handed out by
/// largest fractional part; every sample lands in exactly one part.
pub fn split_dataset(d: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() {
        return Err(Error::Partition("no fractions given".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Partition("fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Partition(format!("fractions sum to {total}, not 1")));
    }
    let n = d.len();
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let mut remaining = n - sizes.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = fractions[a] * n as f64 - sizes[a] as f64;
        let rb = fractions[b] * n as f64 - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Partition(format!("part {i} would be empty ({n} samples)")));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (i, size) in sizes.into_iter().enumerate() {
        let mut part = d.select(&perm[start..start + size]);
        part.seed = derive_seed(seed, i as u64);
        parts.push(part);
        start += size;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, sigma: f64) -> DistributionSpec {
        DistributionSpec::new(vec![1.0], d, sigma, 10).unwrap()
    }

    #[test]
    fn x1_is_label_times_u() {
        let s = spec(1, 1.0);
        let ds = sample_dataset(&s, 50, 3).unwrap();
        for smp in &ds.samples {
            assert_eq!(smp.x1, vec![smp.y.sign()]);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DistributionSpec::new(vec![1.0], 0, 1.0, 10).is_err());
        assert!(DistributionSpec::new(vec![1.0], 1, 0.0, 10).is_err());
        assert!(DistributionSpec::new(vec![1.0], 1, -1.0, 10).is_err());
        assert!(DistributionSpec::new(vec![], 1, 1.0, 10).is_err());
        assert!(sample_dataset(&spec(1, 1.0), 0, 1).is_err());
    }

    #[test]
    fn tiny_sigma_stays_tiny() {
        let s = spec(3, 1e-12);
        let ds = sample_dataset(&s, 100, 9).unwrap();
        assert!(ds.samples.iter().flat_map(|x| x.x2.iter()).all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn noise_moments_at_scale() {
        let ds = sample_dataset(&spec(1, 1.0), 100_000, 11).unwrap();
        let xs: Vec<f64> = ds.samples.iter().map(|s| s.x2[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn balanced_flag_forces_balance() {
        let ds = sample_balanced(&spec(2, 1.0), 101, 5).unwrap();
        let pos = ds.samples.iter().filter(|s| s.y == Label::Pos).count();
        assert!(pos == 50 || pos == 51);
    }

    #[test]
    fn bounded_signal_predicate() {
        let m = 500;
        let sigma = (1.0 / (10.0 * (m as f64).sqrt())).sqrt() * 1.01;
        let s = DistributionSpec::bounded_signal(4, 1000, sigma, m).unwrap();
        assert!(s.in_bounded_signal_subspace());
        assert!((s.u_norm_sq() - 1.0 / m as f64).abs() < 1e-15);
        let loud = DistributionSpec::new(vec![1.0, 0.0], 10, sigma, m).unwrap();
        assert!(!loud.in_bounded_signal_subspace());
    }

    #[test]
    fn split_half_and_identity() {
        let ds = sample_dataset(&spec(2, 1.0), 20, 1).unwrap();
        let parts = split_dataset(&ds, &[0.5, 0.5], 4).unwrap();
        assert_eq!(parts[0].len(), 10);
        assert_eq!(parts[1].len(), 10);
        let ids0: std::collections::HashSet<u64> = parts[0].samples.iter().map(|s| s.id).collect();
        assert!(parts[1].samples.iter().all(|s| !ids0.contains(&s.id)));

        let whole = split_dataset(&ds, &[1.0], 4).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].len(), 20);
    }

    #[test]
    fn split_errors() {
        let ds = sample_dataset(&spec(2, 1.0), 3, 1).unwrap();
        assert!(matches!(
            split_dataset(&ds, &[0.9, 0.05, 0.05], 1),
            Err(Error::Partition(_))
        ));
        assert!(split_dataset(&ds, &[0.5, 0.6], 1).is_err());
        assert!(split_dataset(&ds, &[1.5, -0.5], 1).is_err());
    }

    #[test]
    fn sidecar_and_csv_round_trip() {
        let ds = sample_dataset(&DistributionSpec::new(vec![0.3, -0.1], 3, 0.25, 7).unwrap(), 7, u64::MAX - 3)
            .unwrap()
            .with_provenance(Provenance::Private);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read(&ds.sidecar(), std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.provenance, Provenance::Private);
        assert_eq!(back.seed, ds.seed);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            assert_eq!((a.y, &a.x1, &a.x2), (b.y, &b.x1, &b.x2));
        }
    }
}
