//! Parameter counts and the per-layer dilation / receptive-field table of
//! every architecture at 2048-dimensional input and 19 classes.
//!
//! `cargo run --example inspect_architecture -- [arch]`

use tempseg::model::{architecture_report, ModelConfig, Variant};

fn main() -> tempseg::Result<()> {
    let only: Option<Variant> = std::env::args().nth(1).map(|s| s.parse()).transpose()?;
    let all = [Variant::SsTcn, Variant::MsTcn, Variant::MsTcnPp, Variant::MsTcnPpShared];
    for v in all.into_iter().filter(|v| only.is_none_or(|o| o == *v)) {
        let report = architecture_report(&ModelConfig::new(v, 2048, 19))?;
        if only.is_some() {
            print!("{}", report.to_table());
        } else {
            println!("{:<10} {:>9} parameters", v.name(), report.total_parameters);
        }
    }
    Ok(())
}
