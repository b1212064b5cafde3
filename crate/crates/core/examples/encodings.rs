//! The two schedule encodings a model can read and write.

use schedgen::encoding::{decode_continuous, decode_discrete, encode_continuous, encode_discrete};
use schedgen::ActivityType::*;
use schedgen::Schedule;

fn main() -> schedgen::Result<()> {
    let s = Schedule::from_pairs(&[(Home, 475), (Work, 530), (Shop, 25), (Home, 410)])?;
    println!("schedule:   {s}");

    let cont = encode_continuous(&s, 16)?;
    println!("continuous: {cont}");
    let raw: Vec<(usize, f64)> = cont.symbol_ids().zip(cont.durations()).collect();
    println!("decoded:    {}", decode_continuous(&raw)?);

    for step in [10, 60] {
        let disc = encode_discrete(&s, step)?;
        println!("{step:>3}-minute bins ({} tokens) decode to {}", disc.tokens.len(), decode_discrete(&disc)?);
    }
    Ok(())
}
