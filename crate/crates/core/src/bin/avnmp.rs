use avnmp::cli::{main_with, SEED_ENV};

fn main() {
    let env_seed = std::env::var(SEED_ENV).ok();
    let code = main_with(
        std::env::args_os(),
        env_seed.as_deref(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
