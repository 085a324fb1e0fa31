//! One gradient step on a deep linear network: the measured final kernel
//! against the DMFT prediction and the response-free one.

use attnscale::scalinglab::deep_linear_response_check;

fn main() -> attnscale::Result<()> {
    let seeds: Vec<u64> = (0..32).collect();
    let (table, _) = deep_linear_response_check(1024, &[1, 3, 5, 8], 0.1, 1.0, &seeds)?;
    println!("{:>3} {:>10} {:>10} {:>8} {:>8}", "L", "measured", "stderr", "dmft", "naive");
    for r in table {
        println!("{:>3} {:>10.4} {:>10.4} {:>8.4} {:>8.4}", r.depth, r.mean, r.stderr, r.dmft, r.naive);
    }
    Ok(())
}
