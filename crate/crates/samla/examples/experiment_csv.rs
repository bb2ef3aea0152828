//! Runs a small (policy x seed) experiment grid through the harness and
//! shows the files it writes.
//!
//!     cargo run --example experiment_csv

use samla::harness::{parse_config, run_experiment};

fn main() {
    let dir = std::env::temp_dir().join("samla_experiment_example");
    let text = format!(
        "[run]\n\
         domain = admets\n\
         policy = random bo diversity\n\
         seeds = 0 1 2 3\n\
         out_dir = {}\n\
         [episode]\n\
         steps = 6\n\
         warm = 2\n",
        dir.display()
    );
    let cfg = parse_config(&text).expect("valid config");
    let out = run_experiment(&cfg).expect("runnable");

    println!("ran {} cells, {} failed", out.cells_total, out.failures.len());
    for path in &out.episode_files {
        println!("  wrote {}", path.display());
    }
    println!("\nsummary.csv:");
    let summary = std::fs::read_to_string(out.out_dir.join("summary.csv")).expect("written");
    print!("{}", summary);
    println!("\nfirst episode file, first five lines:");
    let episode = std::fs::read_to_string(&out.episode_files[0]).expect("written");
    for line in episode.lines().take(5) {
        println!("  {}", line);
    }
}
