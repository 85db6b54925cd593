use std::process;

fn main() {
    // Die quietly on a closed pipe (`edgeworth … | head`) like any other
    // command-line tool instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    process::exit(edgeworth::cli::run(std::env::args_os()));
}
