fn main() {
    std::process::exit(seqmc_cli::dispatch(std::env::args_os()));
}
