//! `key = value` run configuration. Keys are dotted (`model.sigma`); a
//! `[model]` header prefixes the keys that follow it. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use llob::impact::DepositionTerm;
use llob::*;

const DEFAULTS: &[(&str, &str)] = &[
    ("model.sigma", "1.4142135623730951"),
    ("model.kappa", "0"),
    ("model.lambda", "0"),
    ("model.nu", "0"),
    ("model.L", "1"),
    ("time.T", "1"),
    ("solver.n_steps", "1024"),
    ("solver.picard_tol", "1e-10"),
    ("solver.picard_max_iter", "500"),
    ("solver.damping", "1"),
    ("profile.m0", "1"),
    ("profile.m_end", "0"),
    ("profile.t_switch", "0.5"),
    ("path.kind", "constant"),
    ("path.B0", "0"),
    ("path.seed", "1"),
    ("path.vol", "1"),
    ("depcan.deposition", "plain"),
    ("depcan.weighting", "instantaneous"),
    ("book.M", "5"),
    ("book.P", "500"),
    ("book.dT", "0.001"),
    ("book.stride", "100"),
    ("book.stencil", "forward"),
    ("book.metaorder", "consume"),
    ("book.source_terms", "false"),
    ("book.margin", "0.1"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Res<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// Split `key=value`, trimming both sides.
pub fn split_assignment(line: &str) -> Res<(String, String)> {
    match line.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => err(format!("expected key=value, got '{line}'")),
    }
}

impl Config {
    pub fn load(path: &Path) -> Res<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Res<()> {
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|e| ConfigError(format!("line {}: {e}", no + 1)))?;
            let key = if section.is_empty() { k } else { format!("{section}.{k}") };
            self.set(&key, &v).map_err(|e| ConfigError(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Res<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => err(format!(
                "unknown config key '{key}'; known: {}",
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            )),
        }
    }

    fn raw(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn f64(&self, key: &str) -> Res<f64> {
        self.raw(key)
            .parse()
            .map_err(|_| ConfigError(format!("{key}: expected a number, got '{}'", self.raw(key))))
    }

    pub fn usize(&self, key: &str) -> Res<usize> {
        self.raw(key)
            .parse()
            .map_err(|_| ConfigError(format!("{key}: expected a non-negative integer, got '{}'", self.raw(key))))
    }

    fn bool(&self, key: &str) -> Res<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => err(format!("{key}: expected true or false, got '{other}'")),
        }
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Res<T> {
        let v = self.raw(key);
        options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            ConfigError(format!("{key}: expected one of {}, got '{v}'", names.join(", ")))
        })
    }

    /// `nu` is either one rate or `start:rate` pairs separated by commas.
    fn nu(&self) -> Res<CancellationRate> {
        let v = self.raw("model.nu");
        let parsed = if v.contains(':') {
            let pieces = v
                .split(',')
                .map(|p| {
                    let (a, b) = p.split_once(':').ok_or(())?;
                    Ok((a.trim().parse().map_err(|_| ())?, b.trim().parse().map_err(|_| ())?))
                })
                .collect::<std::result::Result<Vec<(f64, f64)>, ()>>()
                .map_err(|_| ConfigError(format!("model.nu: cannot parse '{v}'")))?;
            CancellationRate::piecewise(pieces)
        } else {
            CancellationRate::constant(self.f64("model.nu")?)
        };
        parsed.map_err(|e| ConfigError(format!("model.nu: {e}")))
    }

    pub fn params(&self) -> Res<ModelParams> {
        ModelParams::new(
            self.f64("model.sigma")?,
            self.f64("model.kappa")?,
            self.f64("model.lambda")?,
            self.nu()?,
            self.f64("model.L")?,
        )
        .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn solver(&self) -> Res<SolverConfig> {
        let cfg = SolverConfig {
            n_steps: self.usize("solver.n_steps")?,
            picard_tol: self.f64("solver.picard_tol")?,
            picard_max_iter: self.usize("solver.picard_max_iter")?,
            damping: self.f64("solver.damping")?,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn variant(&self, name: &str) -> Res<KernelVariant> {
        let params = self.params()?;
        let v = match name {
            "llob" => KernelVariant::Llob(params),
            "depcan" => KernelVariant::DepCan {
                params,
                deposition: self.choice(
                    "depcan.deposition",
                    &[("plain", DepositionTerm::Plain), ("weighted", DepositionTerm::Weighted)],
                )?,
                weighting: self.choice(
                    "depcan.weighting",
                    &[
                        ("instantaneous", CancellationWeighting::Instantaneous),
                        ("cumulative", CancellationWeighting::Cumulative),
                    ],
                )?,
            },
            "meanrev" => KernelVariant::MeanRev(params),
            other => return err(format!("unknown variant '{other}' (expected llob, depcan or meanrev)")),
        };
        v.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(v)
    }

    pub fn path(&self, grid: TimeGrid) -> Res<ReferencePath> {
        let b0 = self.f64("path.B0")?;
        match self.raw("path.kind") {
            "constant" => Ok(ReferencePath::constant(grid, b0)),
            "brownian" => brownian_path(
                self.usize("path.seed")? as u64,
                grid.steps(),
                grid.dt(),
                self.f64("path.vol")?,
                b0,
            )
            .map_err(|e| ConfigError(e.to_string())),
            other => err(format!("path.kind: expected constant or brownian, got '{other}'")),
        }
    }

    /// Profile from a preset name or a `t,m` CSV file.
    pub fn profile(&self, spec: &str, grid: TimeGrid, params: &ModelParams) -> Res<ExecutionProfile> {
        let m0 = self.f64("profile.m0")?;
        let j = params.rate_scale();
        let built = match spec {
            "zero" => Ok(ExecutionProfile::zero(grid)),
            "constant" => ExecutionProfile::constant(grid, m0),
            "const-small" => ExecutionProfile::constant(grid, 1e-2 * j),
            "const-large" => ExecutionProfile::constant(grid, 1e2 * j),
            "round-trip" => ExecutionProfile::round_trip(grid, m0, self.f64("profile.t_switch")?),
            "ramp" => ExecutionProfile::ramp(grid, m0, self.f64("profile.m_end")?),
            file => return read_profile(Path::new(file), grid),
        };
        built.map_err(|e| ConfigError(e.to_string()))
    }

    pub fn sim_options(&self) -> Res<SimOptions> {
        let margin = self.f64("book.margin")?;
        if !(0.0..1.0).contains(&margin) {
            return err("book.margin: must lie in [0, 1)");
        }
        Ok(SimOptions {
            snapshot_stride: self.usize("book.stride")?,
            source_terms: self.bool("book.source_terms")?,
            stencil: self.choice(
                "book.stencil",
                &[("forward", AdvectionStencil::Forward), ("centered", AdvectionStencil::Centered)],
            )?,
            metaorder: self.choice(
                "book.metaorder",
                &[("consume", MetaorderMode::Consume), ("mollified", MetaorderMode::Mollified)],
            )?,
            boundary_margin: margin,
        })
    }

    pub fn book_grid(&self) -> Res<(GridSpec, TimeGrid)> {
        let dt = self.f64("book.dT")?;
        let horizon = self.f64("time.T")?;
        let steps = (horizon / dt).round();
        if !(steps >= 1.0) || ((steps * dt - horizon).abs() > 1e-9 * horizon) {
            return err("book.dT must divide time.T");
        }
        let spec = GridSpec::new(self.f64("book.M")?, self.usize("book.P")?, dt).map_err(|e| ConfigError(e.to_string()))?;
        let tg = TimeGrid::new(horizon, steps as usize).map_err(|e| ConfigError(e.to_string()))?;
        Ok((spec, tg))
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn read_profile(path: &Path, grid: TimeGrid) -> Res<ExecutionProfile> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError(format!(
            "profile '{}' is neither a preset (zero, constant, const-small, const-large, round-trip, ramp) nor a readable file: {e}",
            path.display()
        ))
    })?;
    let mut samples = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(|c| c.trim().parse::<f64>());
        match (cols.next(), cols.next()) {
            (Some(Ok(t)), Some(Ok(m))) => samples.push((t, m)),
            // header row
            _ if no == 0 => continue,
            _ => return err(format!("{}:{}: expected 't,m'", path.display(), no + 1)),
        }
    }
    ExecutionProfile::from_step_samples(grid, &samples).map_err(|e| ConfigError(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys() {
        let mut c = Config::default();
        c.merge_text("[model]\nsigma = 2 # comment\nkappa=0.5\n\n").unwrap();
        assert_eq!(c.f64("model.sigma").unwrap(), 2.0);
        assert_eq!(c.f64("model.kappa").unwrap(), 0.5);
        // a section prefixes dotted keys too
        assert!(c.merge_text("[model]\nsolver.n_steps = 3").is_err());
        assert!(c.merge_text("nonsense").is_err());
        assert!(c.set("model.bogus", "1").is_err());
    }

    #[test]
    fn piecewise_nu() {
        let mut c = Config::default();
        c.set("model.nu", "0:0.5, 10:0.05").unwrap();
        let p = c.params().unwrap();
        assert_eq!(p.nu().pieces(), &[(0.0, 0.5), (10.0, 0.05)]);
        c.set("model.nu", "0:x").unwrap();
        assert!(c.params().is_err());
    }

    #[test]
    fn resolved_lists_every_key() {
        let c = Config::default();
        assert_eq!(c.resolved().lines().count(), DEFAULTS.len());
    }
}
