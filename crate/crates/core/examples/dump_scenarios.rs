//! Writes the built-in scenarios as TOML files (used to generate the
//! golden copies under `scenarios/`).

use reorgsim_core::scenario::builtins;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "scenarios".into());
    std::fs::create_dir_all(&dir).unwrap();
    for name in builtins::BUILTIN_NAMES {
        let script = builtins::by_name(name).unwrap();
        let path = format!("{dir}/{name}.toml");
        std::fs::write(&path, script.to_toml()).unwrap();
        println!("wrote {path}");
    }
}
