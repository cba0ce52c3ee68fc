use std::io::Write;

use dept_core::io_formats::{count_classes, read_detections};
use dept_core::losses::class_weights;

use crate::args::ClassWeightsArgs;
use crate::{emit, read_text, CliError, CliResult};

pub fn run_class_weights(args: &ClassWeightsArgs, out: &mut dyn Write) -> CliResult {
    let counts = match (&args.counts, &args.detections) {
        (Some(c), _) => c.clone(),
        (None, Some(path)) => {
            let text = read_text(path)?;
            let set = read_detections(&text, args.score_threshold)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            count_classes(set.class_ids(), args.n_classes)?
        }
        (None, None) => {
            return Err(CliError::Input(
                "no detections file or --counts given".into(),
            ))
        }
    };
    let table = class_weights(&counts)?;
    let majority = table.majority_class();
    let mut text = format!("{:<6} {:>12} {:>10}\n", "class", "count", "weight");
    for (k, (n, w)) in table.counts().iter().zip(table.weights()).enumerate() {
        let mark = if k == majority { "  (majority)" } else { "" };
        text.push_str(&format!("{k:<6} {n:>12} {w:>10.4}{mark}\n"));
    }
    emit(out, &text)
}
