//! Bundled example programs (the same files live under `programs/` in the
//! repository root).

pub const DEKKER: &str = include_str!("../../../programs/dekker.prog");
pub const DEKKER_FENCED: &str = include_str!("../../../programs/dekker_fenced.prog");
pub const PETERSON: &str = include_str!("../../../programs/peterson.prog");
pub const PETERSON_FENCED: &str = include_str!("../../../programs/peterson_fenced.prog");
pub const MESSAGE_PASSING: &str = include_str!("../../../programs/message_passing.prog");
pub const PARKER: &str = include_str!("../../../programs/parker.prog");
pub const CAS_LOCK: &str = include_str!("../../../programs/cas_lock.prog");

/// Name/text pairs for all bundled programs.
pub const ALL: &[(&str, &str)] = &[
    ("dekker", DEKKER),
    ("dekker_fenced", DEKKER_FENCED),
    ("peterson", PETERSON),
    ("peterson_fenced", PETERSON_FENCED),
    ("message_passing", MESSAGE_PASSING),
    ("parker", PARKER),
    ("cas_lock", CAS_LOCK),
];
