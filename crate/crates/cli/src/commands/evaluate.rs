use std::fs;

use crate::{CliResult, EvaluateArgs, SplitArg};
use taeclsa_core::dataset::Split;
use taeclsa_core::pipeline::Pipeline;
use taeclsa_core::store::Container;
use taeclsa_core::Error;

use super::load_data;

pub fn run(args: EvaluateArgs) -> CliResult {
    let pipeline = Pipeline::from_container(&Container::load(&args.model)?)?;
    let data = load_data(&args.data)?;
    let wanted = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let records: Vec<_> = data
        .records
        .iter()
        .filter(|r| pipeline.split_assignment.get(&r.record_id) == Some(&wanted))
        .collect();
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no records of {} match the model's {:?} split",
            args.data.display(),
            wanted
        ))
        .into());
    }

    let (report, _) = pipeline.evaluate(&records)?;
    print!("{}", report.render_table());
    if let Some(json_path) = &args.json {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Data(format!("serialize report: {e}")))?;
        fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        println!("report written to {}", json_path.display());
    }
    Ok(())
}
