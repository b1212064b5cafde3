//! Turn raw travel-diary rows into a cleaned schedule sample.

use schedgen::ingest::{clean, ingest, read_diaries, split_train_val, LabelMap};

const DIARIES: &str = "pid,day,act,start_min,end_min,trip_min
p1,mon,At home,0,465,15
p1,mon,Employment,480,1020,20
p1,mon,At home,1040,1440,0
p2,mon,At home,0,600,30
p2,mon,Groceries,630,660,30
p2,mon,At home,690,700,0
p2,mon,At home,700,1440,0
p3,mon,Employment,0,700,0
p3,mon,At home,700,1440,0
p4,mon,At home,0,500,0
p4,mon,Employment,490,1440,0
";

const LABELS: &str = "label,activity
At home,home
Employment,work
Groceries,shop
";

fn main() -> schedgen::Result<()> {
    let labels = LabelMap::from_csv(LABELS.as_bytes())?;
    let rows = read_diaries(DIARIES.as_bytes())?;
    let (sample, tiling) = ingest(&rows, &labels)?;
    println!("{} person-days, {} failed to tile", tiling.days, tiling.tiling_dropped);
    let (cleaned, report) = clean(&sample);
    println!("{} not home-based, {} merged", report.dropped, report.merged);
    for (i, s) in cleaned.iter().enumerate() {
        println!("{}: {s}", cleaned.id(i));
    }

    let mut many = cleaned.clone();
    many.schedules = (0..10).flat_map(|_| cleaned.schedules.iter().cloned()).collect();
    many.ids = (0..10).flat_map(|k| cleaned.ids.iter().map(move |id| format!("{id}.{k}"))).collect();
    let (train, val) = split_train_val(&many, 0.9, 1)?;
    println!("split {} -> {} train, {} validation", many.len(), train.len(), val.len());
    Ok(())
}
