//! Run configuration, its TOML form and the `#!` reproducibility header.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use keys::cluster::LeafSize;
use keys::optimize::auto_budget;
use keys::synth::Family;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Lines of an artifact carrying the config start with this.
pub const HEADER_PREFIX: &str = "#! ";

/// A count that is either given or derived from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "SettingRepr", into = "SettingRepr")]
pub enum Setting {
    #[default]
    Auto,
    Fixed(usize),
}

impl Setting {
    pub fn budget(self, n: usize) -> usize {
        match self {
            Setting::Auto => auto_budget(n),
            Setting::Fixed(b) => b,
        }
    }

    pub fn leaf(self) -> LeafSize {
        match self {
            Setting::Auto => LeafSize::Auto,
            Setting::Fixed(m) => LeafSize::Fixed(m),
        }
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Setting::Auto);
        }
        s.parse()
            .map(Setting::Fixed)
            .map_err(|_| format!("expected a count or `auto`, got `{s}`"))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Auto => f.write_str("auto"),
            Setting::Fixed(n) => write!(f, "{n}"),
        }
    }
}

// TOML accepts both `budget = 26` and `budget = "auto"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SettingRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<SettingRepr> for Setting {
    type Error = String;

    fn try_from(r: SettingRepr) -> Result<Self, Self::Error> {
        match r {
            SettingRepr::Count(n) => Ok(Setting::Fixed(n)),
            SettingRepr::Word(w) => w.parse(),
        }
    }
}

impl From<Setting> for SettingRepr {
    fn from(s: Setting) -> Self {
        match s {
            Setting::Auto => SettingRepr::Word("auto".into()),
            Setting::Fixed(n) => SettingRepr::Count(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    #[default]
    Greedy,
    Nongreedy,
    Random,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Greedy => "greedy",
            Algo::Nongreedy => "nongreedy",
            Algo::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Sphere,
    Tradeoff,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Sphere => Family::Sphere,
            FamilyArg::Tradeoff => Family::Tradeoff,
        }
    }
}

/// Every setting of every subcommand, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that produced the artifact.
    pub command: String,
    /// Input CSV files; `serve` accepts several.
    pub data: Vec<PathBuf>,
    pub seed: u64,
    /// Oracle calls allowed; `auto` is `2·⌈log₂N⌉`.
    pub budget: Setting,
    /// Rows per leaf; `auto` is `⌈√N⌉`.
    pub min_leaf: Setting,
    /// Greedy descent stops at this many rows.
    pub stop_leaf: usize,
    /// Ranges combined by rule search.
    pub top_n: usize,
    pub algo: Algo,
    /// Runs with seeds `seed, seed + 1, ...`.
    pub repeats: usize,
    /// Scripted answers (`A`/`B` per line) replacing the objective oracle.
    pub answers: Option<PathBuf>,
    /// Leaf id overrides for `explain`.
    pub desired: Option<usize>,
    pub current: Option<usize>,
    pub family: FamilyArg,
    pub rows: usize,
    pub dims: usize,
    pub inject_optimum: bool,
    pub serve: String,
    pub ui_dir: Option<PathBuf>,
    /// Idle seconds before a review session is closed.
    pub session_timeout: u64,
    /// Where to write the artifact; not part of the header.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            data: Vec::new(),
            seed: 0,
            budget: Setting::Auto,
            min_leaf: Setting::Auto,
            stop_leaf: 4,
            top_n: 10,
            algo: Algo::Greedy,
            repeats: 1,
            answers: None,
            desired: None,
            current: None,
            family: FamilyArg::Sphere,
            rows: 1000,
            dims: 5,
            inject_optimum: false,
            serve: "127.0.0.1:8080".into(),
            ui_dir: None,
            session_timeout: 1800,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are plain scalars and arrays")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    /// The config as `#! key = value` lines.
    pub fn header(&self) -> String {
        self.to_toml()
            .lines()
            .map(|l| format!("{HEADER_PREFIX}{l}\n"))
            .collect()
    }

    /// Reads a config file. An artifact's `#!` header is used when present,
    /// otherwise the whole file is TOML.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&extract_header(&text).unwrap_or(text))
    }

    /// The single input file of a non-serving subcommand.
    pub fn data_path(&self) -> Result<&Path, CliError> {
        match self.data.as_slice() {
            [one] => Ok(one),
            [] => Err(CliError::Usage("--data is required".into())),
            _ => Err(CliError::Usage(format!(
                "{} takes one --data file",
                self.command
            ))),
        }
    }
}

/// The TOML carried by an artifact's `#!` lines, if it has any.
pub fn extract_header(text: &str) -> Option<String> {
    let lines: Vec<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix(HEADER_PREFIX.trim_end()))
        .map(|l| l.strip_prefix(' ').unwrap_or(l))
        .collect();
    if lines.is_empty() {
        return None;
    }
    Some(lines.iter().map(|l| format!("{l}\n")).collect())
}

#[derive(Debug, Parser)]
#[command(
    name = "keys",
    version,
    about = "Small-budget model review for tabular data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a CSV and print the tree with a leaf-size histogram.
    Cluster(Opts),
    /// Search for a good row under a budget.
    Optimize(Opts),
    /// Contrast rule between the best and worst leaves.
    Explain(Opts),
    /// Write a synthetic dataset.
    Gen(Opts),
    /// Run the review service.
    Serve(Opts),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cluster(_) => "cluster",
            Command::Optimize(_) => "optimize",
            Command::Explain(_) => "explain",
            Command::Gen(_) => "gen",
            Command::Serve(_) => "serve",
        }
    }

    pub fn opts(&self) -> &Opts {
        match self {
            Command::Cluster(o)
            | Command::Optimize(o)
            | Command::Explain(o)
            | Command::Gen(o)
            | Command::Serve(o) => o,
        }
    }
}

/// Flags shared by all subcommands; unset flags fall back to `--config`,
/// then to the defaults.
#[derive(Debug, Default, Args)]
pub struct Opts {
    /// Input CSV (repeat for `serve`).
    #[arg(long)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Oracle calls, or `auto`.
    #[arg(long)]
    pub budget: Option<Setting>,
    /// Rows per leaf, or `auto`.
    #[arg(long)]
    pub min_leaf: Option<Setting>,
    #[arg(long)]
    pub stop_leaf: Option<usize>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// File of scripted `A`/`B` answers.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    #[arg(long)]
    pub desired: Option<usize>,
    #[arg(long)]
    pub current: Option<usize>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub inject_optimum: bool,
    /// Address to listen on, `ADDR:PORT`.
    #[arg(long)]
    pub serve: Option<String>,
    /// Directory with the static review UI bundle.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long)]
    pub session_timeout: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config, or an artifact whose `#!` header to reuse.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Defaults, overlaid by the `--config` file, overlaid by explicit flags.
pub fn resolve(command: &str, opts: &Opts) -> Result<RunConfig, CliError> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if !cfg.command.is_empty() && cfg.command != command {
        return Err(CliError::Usage(format!(
            "config was written by `{}`, not `{command}`",
            cfg.command
        )));
    }
    cfg.command = command.to_string();
    if !opts.data.is_empty() {
        cfg.data = opts.data.clone();
    }
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = &opts.$field { cfg.$field = v.clone(); })*
        };
    }
    overlay!(
        seed,
        budget,
        min_leaf,
        stop_leaf,
        top_n,
        algo,
        repeats,
        family,
        rows,
        dims,
        serve,
        session_timeout
    );
    macro_rules! overlay_opt {
        ($($field:ident),*) => {
            $(if opts.$field.is_some() { cfg.$field = opts.$field.clone(); })*
        };
    }
    overlay_opt!(answers, desired, current, ui_dir);
    if opts.inject_optimum {
        cfg.inject_optimum = true;
    }
    cfg.out = opts.out.clone();
    if cfg.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    Ok(cfg)
}
