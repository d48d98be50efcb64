// METEOR on a few pairs, then usable information density and how the
// ranking of two configurations flips as quality is weighted more.

use frugal_prompt::metrics::{crossover_exponent, meteor, rank_dynamics, uid, ConfigPoint};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for (c, r) in [
        ("the cat sat", "the cat sat"),
        ("sat the cat", "the cat sat"),
        ("i love hiking in the hills", "i really love hiking"),
    ] {
        println!("METEOR({c:?}, {r:?}) = {:.4}", meteor(c, r));
    }

    let long = ConfigPoint { config_id: "full-fs".into(), m_h: 0.9, l_h: 1000.0 };
    let short = ConfigPoint { config_id: "summary-zs".into(), m_h: 0.3, l_h: 100.0 };
    let a_values = [0.5, 1.0, 2.0, 5.0, 10.0];
    let table = rank_dynamics(&[long.clone(), short.clone()], &a_values)?;
    for (i, a) in table.a_values.iter().enumerate() {
        println!(
            "a={a:<4} uid(full-fs)={:.3e} rank {} | uid(summary-zs)={:.3e} rank {}",
            uid(long.m_h, long.l_h, *a)?,
            table.ranks[i][0],
            uid(short.m_h, short.l_h, *a)?,
            table.ranks[i][1]
        );
    }
    let a_star = crossover_exponent(&long, &short).ok_or("no crossover")?;
    println!("the longer prompt overtakes above a = {a_star:.3}");
    assert!((a_star - 10f64.ln() / 3f64.ln()).abs() < 1e-12);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
