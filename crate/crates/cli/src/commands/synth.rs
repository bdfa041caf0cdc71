use crate::{usage, CliResult, SynthArgs};
use taeclsa_core::dataset::{generate_synthetic, save_dataset};

use super::ensure_out_dir;

pub fn run(args: SynthArgs) -> CliResult {
    if args.per_class == 0 {
        return Err(usage("--per-class must be at least 1"));
    }
    if args.samples < 16 {
        return Err(usage("--samples must be at least 16"));
    }
    ensure_out_dir(&args.out)?;
    let ds = generate_synthetic(args.per_class, args.samples, args.seed)?;
    save_dataset(&ds, &args.out)?;
    println!("wrote {} records to {}", ds.n(), args.out.display());
    Ok(())
}
