//! Draw ground-truth schedules from the bundled template grammar and write
//! them in the sample-file format.

use schedgen::eval::plots::top_sequences;
use schedgen::oracle::{draw_sample, null_sample, GrammarSpec};
use schedgen::sample_io::write_sample;

fn main() -> schedgen::Result<()> {
    let spec = GrammarSpec::default();
    for t in &spec.templates {
        println!("{:<12} weight {:.2}, {} slots", t.name, t.weight, t.slots.len());
    }

    let sample = draw_sample(&spec, 5000, 1);
    println!("\nmost common sequences:");
    for (seq, share) in top_sequences(&sample.schedules, 6) {
        println!("  {:>5.1}%  {seq}", share * 100.0);
    }

    let null = null_sample(&spec, 5, 1);
    println!("\nuniform-template reference:");
    write_sample(std::io::stdout().lock(), &null)?;
    Ok(())
}
