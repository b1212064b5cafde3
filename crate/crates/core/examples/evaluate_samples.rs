//! Compare two samples with the density, validity and creativity metrics.

use schedgen::eval::{evaluate, Domain};
use schedgen::oracle::{draw_sample, null_sample, resample_baseline, GrammarSpec};

fn main() -> schedgen::Result<()> {
    let spec = GrammarSpec::default();
    let real = draw_sample(&spec, 4000, 5);
    let fresh = draw_sample(&spec, 4000, 6);
    let null = null_sample(&spec, 4000, 5);

    let same = evaluate(&real, &fresh, &real.schedules);
    let uninformed = evaluate(&real, &null, &real.schedules);
    let floor = resample_baseline(&real, 5)?;

    println!("{:<16}{:>12}{:>12}{:>12}", "domain", "same source", "half split", "null");
    for d in Domain::ALL {
        println!("{:<16}{:>12.4}{:>12.4}{:>12.4}", d.name(), same.domain(d), floor.domain(d), uninformed.domain(d));
    }
    println!("\nnull validity: {:?}", uninformed.validity);

    uninformed.write_summary_csv(std::io::stdout().lock())?;
    Ok(())
}
