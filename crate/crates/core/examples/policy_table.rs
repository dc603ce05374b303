//! Transfer policy chosen for a handful of named deployment settings.

use lenc::distill::{select_policy, EnvironmentConstraints};

fn main() {
    let settings: [(&str, u8, bool, bool, bool); 6] = [
        ("open, larger student", 0b00000, false, false, true),
        ("open, same architecture", 0b00000, false, true, false),
        ("private data, same arch", 0b00001, false, true, false),
        ("everything private", 0b00111, false, false, false),
        ("latency, fresh student", 0b10000, true, false, false),
        ("latency, traffic limit", 0b11000, false, false, true),
    ];
    println!("{:<26} {:<8} {:<8} {:<8} {:<16}", "setting", "bits", "policy", "input", "");
    for (name, bits, untrained, shared, complex) in settings {
        let c = EnvironmentConstraints::from_bits(bits);
        let p = select_policy(&c, untrained, shared, complex);
        let input = p.input_option.map_or("-".to_string(), |o| format!("{o:?}"));
        println!("{name:<26} {bits:05b}    {:<8} {input}", format!("{:?}", p.kind));
    }
}
