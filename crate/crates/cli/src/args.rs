//! Command-line flags and how they map onto a run configuration.

use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpac::admm::Mode;
use cpac::config::RunConfig;
use cpac::data::DataFormat;
use cpac::graph::DegreeMean;

#[derive(Debug, Parser)]
#[command(name = "cpac", version, about = "Deep clustering with pairwise constraints")]
pub struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layerwise pretraining followed by end-to-end fine-tuning.
    Pretrain(RunArgs),
    /// Clustering stage on a pretrained network from the output directory.
    Cluster(RunArgs),
    /// Pretraining and clustering in one go.
    Run(RunArgs),
    /// Serve high-loss pairs for labeling over HTTP.
    Label(LabelArgs),
    /// NMI and ACC of an assignment against ground truth.
    Evaluate(EvaluateArgs),
    /// PCA projection of the clustering or latent representation.
    ExportPca(ExportArgs),
    /// Write a synthetic Gaussian-blob dataset with labels.
    Synth(SynthArgs),
}

fn parse_image_shape(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("image dimensions must be positive".into());
    }
    Ok((h, w))
}

/// Comma-separated layer sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSizes(pub Vec<usize>);

impl std::str::FromStr for LayerSizes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| match t.trim().parse::<usize>() {
                Ok(0) => Err("layer sizes must be positive".to_string()),
                Ok(v) => Ok(v),
                Err(e) => Err(format!("'{t}': {e}")),
            })
            .collect::<Result<_, _>>()
            .map(LayerSizes)
    }
}

/// Everything that shapes a run. Flags override values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data matrix, one row per point (.csv, or .bin for the binary format).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<DataFormat>,
    /// Ground-truth labels, one integer per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Rows are HxW grayscale images.
    #[arg(long, value_parser = parse_image_shape)]
    pub image_shape: Option<(usize, usize)>,
    /// Zero-mean, unit-variance features before training.
    #[arg(long)]
    pub standardize: bool,
    /// Run directory for checkpoints and exports.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Neighborhood size of the mutual-kNN graph.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use the mutual-kNN graph alone, without the spanning-forest edges
    /// that keep every point connected.
    #[arg(long)]
    pub mutual_only: bool,
    /// Average degrees over connected points only in the edge weights.
    #[arg(long)]
    pub connected_degree_mean: bool,
    /// Hidden layer sizes, comma separated; the last is the code size.
    #[arg(long)]
    pub hidden: Option<LayerSizes>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs_layerwise: Option<usize>,
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_pretrain: Option<f64>,
    #[arg(long)]
    pub epochs_cluster: Option<usize>,
    /// i: reconstruction + pairwise on Z; ii: pairwise only; iii: ADMM.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Dual ascent step.
    #[arg(long)]
    pub dual_step: Option<f64>,
    /// Epochs between penalty halvings (chosen from graph density when unset).
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long)]
    pub lr_u: Option<f64>,
    #[arg(long)]
    pub lr_net: Option<f64>,
    /// Edges per clustering batch.
    #[arg(long)]
    pub pair_batch_size: Option<usize>,
    /// Constraint journal (p,q,kind,timestamp) applied before clustering.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Keep the pair ranking from initialization across labeling rounds.
    #[arg(long)]
    pub keep_ranking: bool,
    #[arg(long)]
    pub pca_dims: Option<usize>,
}

impl RunArgs {
    pub fn to_config(&self) -> cpac::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        if self.format.is_some() {
            c.format = self.format;
        }
        if self.labels.is_some() {
            c.labels = self.labels.clone();
        }
        if self.image_shape.is_some() {
            c.image_shape = self.image_shape;
        }
        if self.constraints.is_some() {
            c.constraints = self.constraints.clone();
        }
        if self.interval.is_some() {
            c.cluster.interval_override = self.interval;
        }
        c.standardize |= self.standardize;
        if self.keep_ranking {
            c.refresh_ranking = false;
        }
        set!(c.output_dir, self.output);
        set!(c.seed, self.seed);
        set!(c.graph.k, self.k);
        if self.mutual_only {
            c.graph.spanning_forest = false;
        }
        if self.connected_degree_mean {
            c.graph.degree_mean = DegreeMean::ConnectedOnly;
        }
        if let Some(LayerSizes(sizes)) = &self.hidden {
            c.pretrain.hidden = sizes.clone();
        }
        set!(c.pretrain.dropout_rate, self.dropout);
        set!(c.pretrain.layerwise_epochs, self.epochs_layerwise);
        set!(c.pretrain.finetune_epochs, self.epochs_finetune);
        set!(c.pretrain.batch_size, self.batch_size);
        set!(c.pretrain.learning_rate, self.lr_pretrain);
        set!(c.cluster.epochs, self.epochs_cluster);
        set!(c.cluster.mode, self.mode);
        set!(c.cluster.dual_step, self.dual_step);
        set!(c.cluster.u_learning_rate, self.lr_u);
        set!(c.cluster.net_learning_rate, self.lr_net);
        set!(c.cluster.pair_batch_size, self.pair_batch_size);
        set!(c.pca_dims, self.pca_dims);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Assignment CSV (index,label); defaults to the one in the run directory.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Also write the metrics as metric,value CSV.
    #[arg(long)]
    pub write: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    /// Clustering representation U from the run checkpoint.
    U,
    /// Encoder output Z of the saved network.
    Z,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = Space::U)]
    pub space: Space,
    /// Output CSV; defaults to pca.csv in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    /// Center distance in units of the within-blob deviation.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; labels go to the sibling `.labels` file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub format: Option<DataFormat>,
}
