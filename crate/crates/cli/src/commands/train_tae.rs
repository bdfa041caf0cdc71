use crate::{usage, CliResult, TrainTaeArgs};
use taeclsa_core::dataset::{
    smote_balance, smote_balance_records, split_80_10_10, Dataset, Split,
};
use taeclsa_core::preprocess::{make_pairs, DEFAULT_WINDOW};
use taeclsa_core::tae::{tae_train_two_batch, TaeConfig, TaeModel};

use super::{ensure_out_dir, load_data, resolve, write_loss_csv, FileConfig};

pub fn run(args: TrainTaeArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_ref())?;
    let window = resolve(args.window, file.window, DEFAULT_WINDOW);
    if window < 3 || window % 2 == 0 {
        return Err(usage(format!("--window must be odd and >= 3, got {window}")));
    }
    let latent = resolve(args.latent, file.latent, 6);
    if latent == 0 {
        return Err(usage("--latent must be at least 1"));
    }
    let epochs = resolve(args.epochs, file.epochs, 50);
    let lr = resolve(args.lr, file.lr, 1e-3);
    let smote_k = resolve(args.smote_k, file.smote_k, 5);
    let paper_faithful = args.paper_faithful || file.paper_faithful.unwrap_or(false);

    let raw = load_data(&args.data)?;
    let dataset = if paper_faithful {
        let balanced = smote_balance_records(&raw.records, smote_k, args.seed)?;
        split_80_10_10(Dataset::new(balanced), args.seed)?
    } else {
        let split = split_80_10_10(raw, args.seed)?;
        smote_balance(&split, smote_k, args.seed)?
    };
    let train_records = dataset.records_in(Split::Train);
    let pairs: Vec<_> = train_records
        .iter()
        .map(|rec| make_pairs(rec, window))
        .collect::<taeclsa_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let config = TaeConfig {
        latent_dim: latent,
        identity_ae: args.identity_ae,
        relu_output: args.relu_output,
        extra_output_layer: args.extra_output_layer,
        batch_size: resolve(args.batch_size, file.tae_batch_size, 256),
        ..TaeConfig::default()
    };
    let model = TaeModel::init(config, args.seed)?;
    let out = tae_train_two_batch(&pairs, model, epochs, lr, args.seed)?;

    ensure_out_dir(&args.out)?;
    for report in &out.reports {
        write_loss_csv(
            &args.out.join(format!("tae_loss_batch{}.csv", report.batch_index)),
            &report.train_mse,
            &report.val_mse,
        )?;
        println!(
            "batch {}: {} epochs, val MSE {:.6} -> {:.6}, test MSE {:.6}",
            report.batch_index,
            report.epochs_run,
            report.initial_val_mse,
            report.val_mse.last().copied().unwrap_or(f64::NAN),
            report.test_mse,
        );
    }

    let mut container = out.model.to_container()?;
    // protocol provenance alongside the model config
    if let serde_json::Value::Object(map) = &mut container.config {
        map.insert(
            "provenance".into(),
            serde_json::json!({
                "window": window,
                "epochs": epochs,
                "lr": lr,
                "seed": args.seed,
                "smote_k": smote_k,
                "paper_faithful": paper_faithful,
            }),
        );
    }
    let path = args.out.join("tae.taec");
    let checksum = container.save(&path)?;
    println!("checkpoint {} (crc32 {checksum:08x})", path.display());
    Ok(())
}
