//! `key = value` run configuration, layered: defaults, config files in
//! order, `KGIN_SEED`, then command-line flags.

use std::path::Path;

use kgin::inr::SirenConfig;
use kgin::metrics::SsimConfig;
use kgin::phantom::{AcquisitionSpec, PhantomSpec};

use crate::CliError;

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr, )*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $name: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value
                            .parse::<$ty>()
                            .map_err(|e| format!("key {key}: cannot parse {value:?}: {e}"))?;
                    } )*
                    _ => return Err(format!("unknown config key {key:?}")),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($name) => Some(self.$name.to_string()), )*
                    _ => None,
                }
            }
        }

        /// Config values given as flags; these win over files and the environment.
        #[derive(clap::Args, Clone, Debug, Default)]
        pub struct Overrides {
            $( $(#[doc = $doc])* #[arg(long, global = true, help_heading = "Config overrides")] pub $name: Option<$ty>, )*
        }

        impl Overrides {
            pub fn apply(&self, cfg: &mut RunConfig) {
                $( if let Some(v) = &self.$name { cfg.$name = v.clone(); } )*
            }
        }
    };
}

run_config! {
    /// In-plane matrix size (and readout length)
    nx: usize = 64,
    /// Stack-of-stars partitions; 1 for planar scans
    partitions: usize = 1,
    /// Receive coils
    coils: usize = 4,
    /// Spokes of a full scan; 0 picks the Nyquist count
    spokes: usize = 0,
    /// Noise std relative to the peak sample
    noise: f64 = 0.005,
    /// Seed for coil maps, cohorts and network initialization
    seed: u64 = 0,
    /// Seed of the single case built by gen-phantom / simulate
    case_seed: u64 = 1000,
    /// head | random
    phantom: String = "head".into(),
    /// Inclusions of a random phantom
    ellipses: usize = 8,
    /// Relative jitter applied to each case
    jitter: f64 = 0.05,
    /// Cohort size
    cases: usize = 8,
    /// Acceleration factor R
    accel: f64 = 1.0,
    /// Comma-separated accelerations to tune thresholds for
    accels: String = "2,4,8".into(),
    /// Hidden width of the INR
    width: usize = 64,
    /// INR layers, output layer included
    depth: usize = 4,
    /// Sine frequency of the first layer
    omega0: f64 = 30.0,
    /// Prior epochs (each visits every cohort case once)
    prior_epochs: usize = 50,
    /// Prior generator learning rate
    prior_lr: f64 = 1e-3,
    /// Samples per prior step; 0 uses every sample
    batch: usize = 2048,
    /// Weight of the adversarial term in the prior
    adv_weight: f64 = 0.01,
    /// Discriminator hidden layers
    disc_layers: usize = 4,
    /// Discriminator hidden width
    disc_width: usize = 128,
    /// Discriminator / generator learning-rate ratio
    disc_lr_ratio: f64 = 10.0,
    /// Fine-tuning learning rate
    ft_lr: f64 = 1e-4,
    /// Fine-tuning iteration cap
    max_iters: usize = 300,
    /// Fine-tuning stops once the k-space SSIM loss is at most this
    tau: f64 = 0.0015,
    /// Fine-tuning evaluation interval
    eval_every: usize = 10,
    /// CS total-variation weight (relative to the largest eigenvalue of A^H A)
    lambda_tv: f64 = 5e-3,
    /// Huber smoothing of the TV term
    huber_eps: f64 = 0.01,
    /// CS iteration cap
    cs_iters: usize = 200,
    /// windowed | global
    ssim: String = "windowed".into(),
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| kgin::Error::Io {
            path: path.into(),
            source: e,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<(), CliError> {
        if let Some(v) = value {
            self.set("seed", v.trim())
                .map_err(|e| CliError::Usage(format!("KGIN_SEED: {e}")))?;
        }
        Ok(())
    }

    /// Values as config-file text, in declaration order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap_or_default()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if !matches!(self.phantom.as_str(), "head" | "random") {
            return bad(format!("phantom must be head or random, not {:?}", self.phantom));
        }
        if !matches!(self.ssim.as_str(), "windowed" | "global") {
            return bad(format!("ssim must be windowed or global, not {:?}", self.ssim));
        }
        if !(self.accel >= 1.0) {
            return bad(format!("accel {} must be >= 1", self.accel));
        }
        self.accel_list()?;
        Ok(())
    }

    pub fn accel_list(&self) -> Result<Vec<f64>, CliError> {
        self.accels
            .split(',')
            .map(|s| match s.trim().parse::<f64>() {
                Ok(r) if r >= 1.0 => Ok(r),
                _ => Err(CliError::Usage(format!("accels: {s:?} is not an acceleration >= 1"))),
            })
            .collect()
    }

    pub fn acquisition(&self, noise_seed: u64) -> AcquisitionSpec {
        AcquisitionSpec {
            nx: self.nx,
            n_spokes: (self.spokes > 0).then_some(self.spokes),
            n_partitions: self.partitions,
            n_coils: self.coils,
            noise_sigma: self.noise,
            seed: noise_seed,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.nx, self.partitions]
    }

    /// The cohort's base layout.
    pub fn base_phantom(&self) -> PhantomSpec {
        match self.phantom.as_str() {
            "random" => PhantomSpec::random(self.dims(), self.ellipses, self.seed),
            _ => PhantomSpec::head(self.dims()),
        }
    }

    pub fn network(&self) -> SirenConfig {
        SirenConfig {
            input_dim: if self.partitions > 1 { 3 } else { 2 },
            hidden_width: self.width,
            depth: self.depth,
            omega0: self.omega0,
            n_coils: self.coils,
        }
    }

    pub fn ssim_config(&self) -> SsimConfig {
        if self.ssim == "global" {
            SsimConfig::default()
        } else {
            SsimConfig::windowed()
        }
    }
}
