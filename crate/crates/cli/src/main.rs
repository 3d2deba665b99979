mod args;

use std::net::SocketAddr;
use std::process::ExitCode;

use clap::Parser;
use cpac::admm::load_run;
use cpac::config::RunConfig;
use cpac::data::{load_labels, save_dataset, save_labels, sibling_labels_path, synth_blobs, DataFormat};
use cpac::extract::{pca_project, read_assignment};
use cpac::nn::load_net;
use cpac::pipeline::{
    prepare_data, run_cluster, run_pipeline, run_pretrain, Evaluation, RunOutcome, ASSIGNMENT_FILE, NET_FILE,
    PCA_FILE, RUN_FILE,
};
use cpac::Error;
use cpac_label_service::LabelSession;

use args::{Cli, Command, EvaluateArgs, ExportArgs, LabelArgs, Space, SynthArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        (false, _) => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cpac: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> cpac::Result<()> {
    match command {
        Command::Pretrain(a) => {
            let config = a.to_config()?;
            let report = run_pretrain(&config)?;
            println!(
                "reconstruction MSE {:.6} -> {:.6}; network saved to {}",
                report.initial_loss,
                report.final_loss,
                config.output_dir.join(NET_FILE).display()
            );
            Ok(())
        }
        Command::Cluster(a) => {
            let config = a.to_config()?;
            summarize(&run_cluster(&config)?, &config)
        }
        Command::Run(a) => {
            let config = a.to_config()?;
            summarize(&run_pipeline(&config)?, &config)
        }
        Command::Label(a) => label(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportPca(a) => export_pca(a),
        Command::Synth(a) => synth(a),
    }
}

fn summarize(outcome: &RunOutcome, config: &RunConfig) -> cpac::Result<()> {
    let a = &outcome.assignment;
    println!("{} clusters at threshold {:.6}", a.count, a.threshold);
    if let Some(e) = &outcome.evaluation {
        println!("{e}");
    }
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

fn label(a: LabelArgs) -> cpac::Result<()> {
    let config = a.run.to_config()?;
    let session = LabelSession::open(config).map_err(|e| match e {
        cpac_label_service::SessionError::Core(e) => e.in_stage("label"),
        other => Error::State(other.to_string()).in_stage("label"),
    })?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_io()
        .build()
        .map_err(|e| Error::from(e).in_stage("label"))?;
    let addr = SocketAddr::new(a.host, a.port);
    runtime
        .block_on(cpac_label_service::serve(session, addr))
        .map_err(|e| Error::from(e).in_stage("label"))
}

fn evaluate(a: EvaluateArgs) -> cpac::Result<()> {
    let config = a.run.to_config()?;
    let run = || -> cpac::Result<Evaluation> {
        let truth_path = match (&config.labels, &config.data) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => sibling_labels_path(d),
            (None, None) => return Err(Error::Parameter("pass --labels or --data to locate ground truth".into())),
        };
        let truth = load_labels(&truth_path)?;
        let assignment = a.assignment.clone().unwrap_or_else(|| config.output_dir.join(ASSIGNMENT_FILE));
        let predicted = read_assignment(&assignment)?;
        let e = Evaluation::compute(&truth, &predicted)?;
        if let Some(path) = &a.write {
            e.write_csv(path)?;
        }
        Ok(e)
    };
    let e = run().map_err(|e| e.in_stage("evaluate"))?;
    println!("{e}");
    Ok(())
}

fn export_pca(a: ExportArgs) -> cpac::Result<()> {
    let config = a.run.to_config()?;
    let run = || -> cpac::Result<std::path::PathBuf> {
        let m = match a.space {
            Space::U => load_run(&config.output_dir.join(RUN_FILE))?.u,
            Space::Z => {
                let data = prepare_data(&config)?;
                let net = load_net(&config.output_dir.join(NET_FILE), config.pretrain.dropout_rate)?;
                net.encode(data.values(), None)?
            }
        };
        let assignment = config.output_dir.join(ASSIGNMENT_FILE);
        let labels = if assignment.exists() {
            read_assignment(&assignment)?
        } else {
            log::warn!("no assignment in {}; writing label 0 for every point", config.output_dir.display());
            vec![0; m.nrows()]
        };
        let projection = pca_project(&m, config.pca_dims)?;
        let out = a.out.clone().unwrap_or_else(|| config.output_dir.join(PCA_FILE));
        projection.write_csv(&out, &labels)?;
        let total: f64 = projection.variances.iter().sum();
        log::info!("projected variances {:?} (sum {total:.6})", projection.variances);
        Ok(out)
    };
    let out = run().map_err(|e| e.in_stage("export"))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> cpac::Result<()> {
    let data = synth_blobs(a.n, a.dim, a.clusters, a.separation, a.seed)?;
    let format = a.format.unwrap_or_else(|| DataFormat::from_extension(&a.out));
    save_dataset(&a.out, &data, format)?;
    let labels_path = sibling_labels_path(&a.out);
    save_labels(&labels_path, data.labels().unwrap_or_default())?;
    println!(
        "wrote {} points of dimension {} to {} (labels in {})",
        data.n(),
        data.dim(),
        a.out.display(),
        labels_path.display()
    );
    Ok(())
}
