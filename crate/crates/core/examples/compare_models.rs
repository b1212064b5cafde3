//! Is one model's timing distance reliably lower than another's? Welch's
//! t-test over per-run results.

use schedgen::eval::welch_t_test;

fn main() -> schedgen::Result<()> {
    let cont_rnn = [0.021, 0.034, 0.017, 0.030, 0.023];
    let disc_cnn = [0.049, 0.040, 0.043, 0.038, 0.050];
    let w = welch_t_test(&cont_rnn, &disc_cnn)?;
    println!("t = {:.3}, df = {:.2}, p = {:.5}", w.t, w.df, w.p);
    println!("{}", if w.p < 0.05 { "significant at 5%" } else { "not significant at 5%" });
    Ok(())
}
