fn main() {
    cuntzlab::cli::init_threads();
    let out = cuntzlab::cli::run(std::env::args_os());
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    std::process::exit(out.code);
}
