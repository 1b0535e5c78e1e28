// SPDX-License-Identifier: Apache-2.0

#[tokio::main]
async fn main() {
    let args: Vec<String> = std::env::args().collect();
    let code = netorch::cli::run(args, &mut std::io::stdout(), &mut std::io::stderr()).await;
    std::process::exit(code);
}
