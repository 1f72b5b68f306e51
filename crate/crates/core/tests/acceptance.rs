//! Runs every acceptance criterion and prints one line per criterion.

use aggrevated::verify::{run_suite, Suite};

fn main() {
    let results = run_suite(Suite::All, |r| println!("{r}"));
    let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
