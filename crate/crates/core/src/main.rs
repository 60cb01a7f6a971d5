fn main() {
    std::process::exit(seqsynth::cli::main_with_args(std::env::args_os()));
}
