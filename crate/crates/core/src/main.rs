fn main() {
    std::process::exit(stage_planner::cli::cli_main(std::env::args_os()));
}
