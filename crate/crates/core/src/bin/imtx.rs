fn main() {
    std::process::exit(image_transformer::cli::run(std::env::args_os()));
}
