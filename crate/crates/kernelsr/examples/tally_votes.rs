//! Aggregate the shipped user-study votes into the per-domain table and
//! report each domain's winner.
//!
//! Run with: cargo run --example tally_votes

use kernelsr::corpus::{column_totals, format_vote_table, load_votes};
use kernelsr::{aggregate_votes, winners};

fn main() -> kernelsr::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/table1_votes.csv");
    let records = load_votes(&path)?;
    println!("loaded {} votes from {}", records.len(), path.display());

    let table = aggregate_votes(&records);
    print!("{}", format_vote_table(&table));

    for (domain, total) in column_totals(&table) {
        println!("{domain:?}: {total} votes");
    }
    for (domain, model) in winners(&table) {
        println!("winner {domain:?}: {model}");
    }
    Ok(())
}
