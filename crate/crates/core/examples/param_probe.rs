use std::time::Instant;
use tso_robust::attack::enumerate_attacks;
use tso_robust::param::{counter_abstraction, coverable, instance, Marking};
use tso_robust::instrument::instrument_parameterized;
use tso_robust::parser::parse_program;

fn main() {
    let p = parse_program(tso_robust::corpus::DEKKER).unwrap();
    let a = enumerate_attacks(&p)[0];
    let t0 = Instant::now();
    let ip = instrument_parameterized(&p, &a).unwrap();
    println!("instrument: {:?}, insts={}", t0.elapsed(), ip.program.instruction_count());
    let t0 = Instant::now();
    let abs = counter_abstraction(&ip.program).unwrap();
    println!(
        "abstraction: {:?}, places={}, transitions={}",
        t0.elapsed(),
        abs.net.place_count(),
        abs.net.transitions.len()
    );
    let mut goal = Marking::default();
    goal.set(abs.memory_place(ip.encoding.success_cell() as u32, 1), 1);
    let t0 = Instant::now();
    let result = coverable(&abs.net, &abs.initial, &goal, 200_000);
    match &result {
        tso_robust::param::Coverability::Coverable { firing } => {
            println!("coverable, firing len {}", firing.len())
        }
        other => println!("{other:?}"),
    }
    println!("coverability: {:?}", t0.elapsed());
    let _ = instance(&ip.program, &[1, 1]);
}
