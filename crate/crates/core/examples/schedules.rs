//! Building, validating and cleaning schedules.

use schedgen::schedule::{round_to_minutes, ZeroDuration, RESTRICTED};
use schedgen::ActivityType::*;
use schedgen::Schedule;

fn main() -> schedgen::Result<()> {
    let day = Schedule::from_pairs(&[(Home, 420), (Home, 60), (Work, 540), (Shop, 30), (Home, 390)])?;
    println!("raw:      {day}");
    println!("starts:   {:?}", day.starts());
    println!("home-based: {}, repeats home/work/education: {}", day.is_home_based(), day.has_forbidden_consecutive());

    let merged = day.merge_consecutive(&RESTRICTED);
    println!("merged:   {merged}");

    // fractions of a day round to whole minutes that still sum to 1440
    let rounded = round_to_minutes(&[(Home, 0.3333), (Education, 0.3334), (Home, 0.3333)], ZeroDuration::Drop)?;
    println!("rounded:  {rounded}");

    match Schedule::from_pairs(&[(Home, 1000)]) {
        Ok(_) => unreachable!(),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
