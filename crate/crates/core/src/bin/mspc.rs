fn main() {
    mspc::cli::main()
}
