use crate::{usage, AblateArgs, CliResult, GridArg};
use taeclsa_core::clsa::ClsaConfig;
use taeclsa_core::dataset::{Dataset, Split};
use taeclsa_core::pipeline::{train_pipeline, PipelineTrainConfig, TrainedPipeline};
use taeclsa_core::tae::TaeConfig;

use super::{ensure_out_dir, load_data, resolve, write_csv, FileConfig};

/// Distinct rows of the unit-variation table: (conv filters, kernel, lstm).
const UNIT_GRID: [(usize, usize, usize); 10] = [
    (128, 3, 128),
    (256, 3, 128),
    (256, 3, 256),
    (256, 5, 256),
    (512, 3, 128),
    (512, 5, 128),
    (512, 3, 256),
    (500, 3, 512),
    (1024, 3, 512),
    (1024, 3, 1024),
];

const WINDOW_GRID: [usize; 4] = [11, 7, 9, 5];
const LATENT_GRID: [usize; 5] = [12, 10, 8, 6, 4];
const TAE_GRID: [(bool, f64); 6] =
    [(false, 0.1), (false, 0.01), (false, 0.001), (true, 0.1), (true, 0.01), (true, 0.001)];

fn run_cell(data: &Dataset, cfg: &PipelineTrainConfig, seed: u64) -> Result<(f64, usize), crate::CliError> {
    let trained: TrainedPipeline = train_pipeline(data, cfg, seed)?;
    let test = trained.dataset.records_in(Split::Test);
    let (report, _) = trained.pipeline.evaluate(&test)?;
    Ok((report.accuracy, trained.pipeline.clsa.total_params()))
}

pub fn run(args: AblateArgs) -> CliResult {
    if args.width_scale == 0 {
        return Err(usage("--width-scale must be at least 1"));
    }
    let file = FileConfig::load(args.config.as_ref())?;
    let data = load_data(&args.data)?;
    ensure_out_dir(&args.out)?;

    let base = PipelineTrainConfig {
        clsa_epochs: resolve(args.epochs, file.epochs, 30),
        tae_epochs: resolve(args.tae_epochs, file.tae_epochs, 50),
        clsa: ClsaConfig {
            conv_filters: resolve(args.conv_filters, file.conv_filters, 512),
            lstm_units: resolve(args.lstm_units, file.lstm_units, 256),
            batch_size: resolve(None, file.batch_size, 32),
            ..ClsaConfig::default()
        },
        ..PipelineTrainConfig::default()
    };

    match args.grid {
        GridArg::Window => {
            let mut rows = Vec::new();
            for window in WINDOW_GRID {
                let cfg = PipelineTrainConfig { window, ..base.clone() };
                let (acc, params) = run_cell(&data, &cfg, args.seed)?;
                println!("window {window}: accuracy {acc:.4}, {params} params");
                rows.push(vec![window.to_string(), acc.to_string(), params.to_string()]);
            }
            write_csv(&args.out.join("window.csv"), &["window", "accuracy", "param_count"], &rows)?;
        }
        GridArg::Latent => {
            let mut rows = Vec::new();
            for latent in LATENT_GRID {
                let cfg = PipelineTrainConfig {
                    tae: TaeConfig { latent_dim: latent, ..base.tae.clone() },
                    ..base.clone()
                };
                let (acc, params) = run_cell(&data, &cfg, args.seed)?;
                println!("latent {latent}: accuracy {acc:.4}, {params} params");
                rows.push(vec![latent.to_string(), acc.to_string(), params.to_string()]);
            }
            write_csv(&args.out.join("latent.csv"), &["latent", "accuracy", "param_count"], &rows)?;
        }
        GridArg::Units => {
            let scale = args.width_scale;
            let mut rows = Vec::new();
            for (conv, kernel, lstm) in UNIT_GRID {
                let cfg = PipelineTrainConfig {
                    clsa: ClsaConfig {
                        conv_filters: (conv / scale).max(1),
                        kernel_size: kernel,
                        lstm_units: (lstm / scale).max(1),
                        ..base.clsa.clone()
                    },
                    ..base.clone()
                };
                let (acc, params) = run_cell(&data, &cfg, args.seed)?;
                println!("conv {conv} k{kernel} lstm {lstm} (/{scale}): accuracy {acc:.4}, {params} params");
                rows.push(vec![
                    conv.to_string(),
                    kernel.to_string(),
                    lstm.to_string(),
                    acc.to_string(),
                    params.to_string(),
                ]);
            }
            write_csv(
                &args.out.join("units.csv"),
                &["conv_units", "kernel", "lstm_units", "accuracy", "param_count"],
                &rows,
            )?;
        }
        GridArg::Tae => {
            let mut rows = Vec::new();
            for (use_tae, lr) in TAE_GRID {
                let cfg = PipelineTrainConfig { use_tae, clsa_lr: lr, ..base.clone() };
                let (acc, params) = run_cell(&data, &cfg, args.seed)?;
                let model = if use_tae { "tae_clsa" } else { "clsa_only" };
                println!("{model} lr {lr}: accuracy {acc:.4}, {params} params");
                rows.push(vec![model.to_string(), lr.to_string(), acc.to_string(), params.to_string()]);
            }
            write_csv(&args.out.join("tae.csv"), &["model", "lr", "accuracy", "param_count"], &rows)?;
        }
    }
    Ok(())
}
