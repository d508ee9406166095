fn main() {
    std::process::exit(deblur_mfi::cli::run(std::env::args_os()));
}
