//! Reference model plugin: the constant-velocity baseline served over the
//! line-delimited plugin protocol on stdin/stdout.

use step_core::model::plugin::{reference::CvPluginHandler, serve};

fn main() -> std::io::Result<()> {
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    let mut handler = CvPluginHandler::new();
    serve(stdin, stdout, &mut handler)
}
