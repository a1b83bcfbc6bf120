//! Flat key-value run configuration. Keys come from a TOML file and from
//! command-line flags of the same name; flags win over the file, the file
//! wins over command defaults.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::driver::{DriverConfig, DriverKind};
use crate::error::{Error, Result};
use crate::pressure::{BirkhoffOptions, BowenOptions, GridSpec};
use crate::radial::{RasterWindow, ScanGrid};
use crate::transfer::{Convention, TransferParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pressure,
    Bowen,
    Scan,
    Raster,
    Measure,
}

macro_rules! settings {
    ($( $(#[$meta:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
        #[serde(deny_unknown_fields)]
        pub struct Settings {
            $(
                $(#[$meta])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl Settings {
            /// Field-wise `self` over `lower`.
            pub fn over(self, lower: Settings) -> Settings {
                Settings { $( $field: self.$field.or(lower.$field), )* }
            }
        }
    };
}

settings! {
    /// constant, iid_uniform, markov or rotation
    #[arg(long)]
    driver: String,
    #[arg(long = "A")]
    #[serde(rename = "A")]
    a: f64,
    #[arg(long = "B")]
    #[serde(rename = "B")]
    b: f64,
    #[arg(long)]
    seed: u64,
    /// Markov state values, comma separated
    #[arg(long, value_delimiter = ',')]
    markov_values: Vec<f64>,
    /// Markov transition matrix (config file only)
    #[arg(skip)]
    markov_transition: Vec<Vec<f64>>,
    #[arg(long)]
    rotation_alpha: f64,
    #[arg(long)]
    rotation_phase: f64,
    /// A single value or an inclusive range lo:hi:step
    #[arg(long)]
    t: String,
    /// image_modulus or eta_factor
    #[arg(long)]
    convention: String,
    #[arg(long)]
    tail_tol: f64,
    #[arg(long)]
    prune: f64,
    #[arg(long)]
    max_budget: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    burn: usize,
    #[arg(long)]
    atoms: usize,
    /// birkhoff_lambda or operator_grid
    #[arg(long)]
    method: String,
    #[arg(long)]
    grid_m: f64,
    #[arg(long)]
    grid_resolution: f64,
    #[arg(long)]
    tol: f64,
    #[arg(long)]
    t_lo: f64,
    #[arg(long)]
    t_hi: f64,
    #[arg(long)]
    scan_m: f64,
    #[arg(long)]
    scan_grid: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    re_min: f64,
    #[arg(long)]
    re_max: f64,
    #[arg(long)]
    im_min: f64,
    #[arg(long)]
    im_max: f64,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    threshold: f64,
    #[arg(long)]
    audit_n: usize,
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing required key `{key}`"))
}

fn set<T>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Fill command defaults. Fails on missing required keys.
    pub fn resolve(mut self, cmd: Command) -> Result<Self> {
        set(&mut self.driver, "constant".to_string());
        let a = self.a.ok_or_else(|| missing("A"))?;
        if self.driver.as_deref() == Some("constant") {
            set(&mut self.b, a);
        }
        if self.b.is_none() {
            return Err(missing("B"));
        }
        set(&mut self.seed, 0);
        if self.driver.as_deref() == Some("rotation") {
            set(&mut self.rotation_phase, 0.0);
        }
        match cmd {
            Command::Pressure | Command::Bowen | Command::Measure => {
                set(&mut self.convention, "image_modulus".into());
                set(&mut self.tail_tol, 1e-10);
                set(&mut self.prune, 1e-14);
                set(&mut self.max_budget, 1e-6);
                set(&mut self.n, 200);
                let n = self.n.unwrap_or(0);
                set(&mut self.burn, n / 4);
                set(&mut self.atoms, 2000);
            }
            _ => {}
        }
        match cmd {
            Command::Pressure => {
                set(&mut self.t, "1.1:2.0:0.1".into());
                set(&mut self.method, "birkhoff_lambda".into());
                if self.method.as_deref() == Some("operator_grid") {
                    let g = GridSpec::default();
                    set(&mut self.grid_m, g.m);
                    set(&mut self.grid_resolution, g.resolution);
                }
            }
            Command::Bowen => {
                let d = BowenOptions::default();
                set(&mut self.tol, d.tol);
                set(&mut self.t_lo, d.t_lo);
                set(&mut self.t_hi, d.t_hi);
            }
            Command::Scan => {
                set(&mut self.n, 60);
                set(&mut self.scan_m, 3.0);
                set(&mut self.scan_grid, 200);
                set(&mut self.delta, 0.1);
            }
            Command::Raster => {
                set(&mut self.n, 40);
                set(&mut self.re_min, -2.0);
                set(&mut self.re_max, 2.0);
                set(&mut self.im_min, 0.0);
                set(&mut self.im_max, crate::geom::TWO_PI);
                set(&mut self.width, 256);
                set(&mut self.height, 256);
                set(&mut self.threshold, 1e6);
            }
            Command::Measure => {
                set(&mut self.t, "1.5".into());
                set(&mut self.audit_n, 5);
            }
        }
        self.driver_config()?;
        Ok(self)
    }

    pub fn driver_config(&self) -> Result<DriverConfig> {
        let a = self.a.ok_or_else(|| missing("A"))?;
        let b = self.b.ok_or_else(|| missing("B"))?;
        let kind = match self.driver.as_deref().unwrap_or("constant") {
            "constant" => DriverKind::Constant,
            "iid_uniform" => DriverKind::IidUniform,
            "markov" => DriverKind::Markov {
                transition: self
                    .markov_transition
                    .clone()
                    .ok_or_else(|| missing("markov_transition"))?,
                values: self.markov_values.clone().ok_or_else(|| missing("markov_values"))?,
            },
            "rotation" => DriverKind::Rotation {
                alpha: self.rotation_alpha.ok_or_else(|| missing("rotation_alpha"))?,
                phase: self.rotation_phase.unwrap_or(0.0),
            },
            other => return Err(Error::Config(format!("unknown driver `{other}`"))),
        };
        let cfg = DriverConfig {
            a,
            b,
            kind,
            seed: self.seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn get<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
        v.ok_or_else(|| missing(key))
    }

    pub fn transfer_params(&self, t: f64) -> Result<TransferParams> {
        let mut tp = TransferParams::new(t)?;
        tp.convention = match self.convention.as_deref().unwrap_or("image_modulus") {
            "image_modulus" => Convention::ImageModulus,
            "eta_factor" => Convention::EtaFactor,
            other => return Err(Error::Config(format!("unknown convention `{other}`"))),
        };
        if let Some(v) = self.tail_tol {
            tp.tail_tol = v;
        }
        if let Some(v) = self.prune {
            tp.prune = v;
        }
        if let Some(v) = self.max_budget {
            tp.max_budget = v;
        }
        tp.validate()?;
        Ok(tp)
    }

    pub fn t_values(&self) -> Result<Vec<f64>> {
        parse_t(self.t.as_deref().ok_or_else(|| missing("t"))?)
    }

    pub fn birkhoff(&self) -> Result<BirkhoffOptions> {
        let n = Self::get(self.n, "n")?;
        let burn = Self::get(self.burn, "burn")?;
        if burn >= n {
            return Err(Error::Config(format!("burn ({burn}) must be smaller than n ({n})")));
        }
        Ok(BirkhoffOptions {
            n,
            burn,
            atoms: Self::get(self.atoms, "atoms")?,
        })
    }

    pub fn bowen(&self) -> Result<BowenOptions> {
        Ok(BowenOptions {
            tol: Self::get(self.tol, "tol")?,
            t_lo: Self::get(self.t_lo, "t_lo")?,
            t_hi: Self::get(self.t_hi, "t_hi")?,
            ..BowenOptions::default()
        })
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec {
            m: Self::get(self.grid_m, "grid_m")?,
            resolution: Self::get(self.grid_resolution, "grid_resolution")?,
            ..GridSpec::default()
        })
    }

    pub fn scan_grid(&self) -> Result<ScanGrid> {
        let side = Self::get(self.scan_grid, "scan_grid")?;
        Ok(ScanGrid {
            m: Self::get(self.scan_m, "scan_m")?,
            n_re: side,
            n_im: side,
        })
    }

    pub fn raster_window(&self) -> Result<RasterWindow> {
        Ok(RasterWindow {
            re_min: Self::get(self.re_min, "re_min")?,
            re_max: Self::get(self.re_max, "re_max")?,
            im_min: Self::get(self.im_min, "im_min")?,
            im_max: Self::get(self.im_max, "im_max")?,
            width: Self::get(self.width, "width")?,
            height: Self::get(self.height, "height")?,
        })
    }
}

/// `"x"` or the inclusive range `"lo:hi:step"`.
pub fn parse_t(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("t must be a number or lo:hi:step, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let values = match parts[..] {
        [t] => vec![t],
        [lo, hi, step] => {
            if !(step > 0.0 && hi >= lo) {
                return Err(bad());
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            (0..count)
                .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
                .collect()
        }
        _ => return Err(bad()),
    };
    if values.iter().any(|&t| !(t > 1.0) || !t.is_finite()) {
        return Err(Error::Config(format!("all t must exceed 1, got `{spec}`")));
    }
    Ok(values)
}
