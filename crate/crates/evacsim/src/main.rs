fn main() {
    evacsim::cli::run();
}
