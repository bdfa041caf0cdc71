use crate::{usage, CliResult, PoolArg, TrainClsaArgs};
use taeclsa_core::clsa::{AttentionPool, ClsaConfig, OutputActivation};
use taeclsa_core::pipeline::{train_pipeline_with, PipelineTrainConfig};
use taeclsa_core::preprocess::DEFAULT_WINDOW;
use taeclsa_core::store::Container;
use taeclsa_core::tae::TaeModel;

use super::{ensure_out_dir, load_data, resolve, write_csv, FileConfig};

pub fn run(args: TrainClsaArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_ref())?;
    let epochs = resolve(args.epochs, file.epochs, 30);
    if epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    let window = resolve(args.window, file.window, DEFAULT_WINDOW);
    if window < 3 || window % 2 == 0 {
        return Err(usage(format!("--window must be odd and >= 3, got {window}")));
    }

    let tae = match &args.tae {
        Some(path) => {
            let model = TaeModel::from_container(&Container::load(path)?)?;
            Some(model)
        }
        None => None,
    };

    let clsa = ClsaConfig {
        conv_filters: resolve(args.conv_filters, file.conv_filters, 512),
        kernel_size: resolve(args.kernel_size, file.kernel_size, 3),
        lstm_units: resolve(args.lstm_units, file.lstm_units, 256),
        dense1: resolve(args.dense1, file.dense1, 64),
        dense2: resolve(args.dense2, file.dense2, 32),
        dropout_rate: resolve(args.dropout, file.dropout, 0.2),
        l2_kernel: resolve(args.l2_kernel, file.l2_kernel, 0.2),
        batch_size: resolve(args.batch_size, file.batch_size, 32),
        finetune_embedding: args.finetune_embedding,
        attention_projections: args.attention_projections,
        attention_pool: match args.attention_pool {
            Some(PoolArg::Mean) | None => AttentionPool::Mean,
            Some(PoolArg::Last) => AttentionPool::Last,
            Some(PoolArg::Max) => AttentionPool::Max,
        },
        output_activation: if args.sigmoid_output {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Softmax
        },
        ..ClsaConfig::default()
    };
    let cfg = PipelineTrainConfig {
        window,
        smote_k: resolve(args.smote_k, file.smote_k, 5),
        quant: file.quant.unwrap_or(taeclsa_core::preprocess::DEFAULT_QUANT),
        use_tae: tae.is_some(),
        paper_faithful: args.paper_faithful || file.paper_faithful.unwrap_or(false),
        clsa,
        clsa_epochs: epochs,
        clsa_lr: resolve(args.lr, file.lr, 1e-3),
        ..PipelineTrainConfig::default()
    };

    let raw = load_data(&args.data)?;
    let trained = train_pipeline_with(&raw, &cfg, args.seed, tae)?;

    ensure_out_dir(&args.out)?;
    let rows: Vec<Vec<String>> = trained
        .clsa_curves
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.train_acc.to_string(),
                e.val_acc.to_string(),
            ]
        })
        .collect();
    write_csv(
        &args.out.join("clsa_curves.csv"),
        &["epoch", "train_loss", "val_loss", "train_acc", "val_acc"],
        &rows,
    )?;
    let last = trained.clsa_curves.last().expect("at least one epoch");
    println!(
        "trained {epochs} epochs; best val epoch {}; final val acc {:.4}",
        trained.best_epoch, last.val_acc
    );

    let path = args.out.join("pipeline.taec");
    let checksum = trained.pipeline.to_container()?.save(&path)?;
    println!("checkpoint {} (crc32 {checksum:08x})", path.display());
    Ok(())
}
