use std::process;

fn main() {
    process::exit(saod::cli::run(std::env::args_os()));
}
