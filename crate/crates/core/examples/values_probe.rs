use tso_robust::attack::enumerate_attacks;
use tso_robust::exec::ExecProgram;
use tso_robust::instrument::instrument_parameterized;
use tso_robust::param::value_analysis;
use tso_robust::parser::parse_program;

fn main() {
    let p = parse_program(tso_robust::corpus::DEKKER).unwrap();
    let a = enumerate_attacks(&p)[0];
    let ip = instrument_parameterized(&p, &a).unwrap();
    let xp = ExecProgram::compile(&ip.program);
    let v = value_analysis(&xp);
    for (a, set) in v.mem.iter().enumerate() {
        println!("mem[{a}] = {set:?}");
    }
    for (ti, t) in xp.threads.iter().enumerate() {
        for (ri, r) in t.reg_names.iter().enumerate() {
            println!("{}::{} = {:?}", t.id, r, v.regs[ti][ri]);
        }
    }
}
