//! Only the backend adapters may construct network requests.

use std::path::{Path, PathBuf};

fn rust_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            rust_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

#[test]
fn network_clients_live_only_in_backends() {
    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap();
    let allowed = Path::new(env!("CARGO_MANIFEST_DIR")).join("src/backends");
    let mut files = Vec::new();
    for krate in std::fs::read_dir(crates).unwrap() {
        let src = krate.unwrap().path().join("src");
        if src.is_dir() {
            rust_files(&src, &mut files);
        }
    }
    assert!(!files.is_empty());
    let offenders: Vec<_> = files
        .iter()
        .filter(|f| !f.starts_with(&allowed))
        .filter(|f| {
            let text = std::fs::read_to_string(f).unwrap();
            ["reqwest", "hyper::client", "TcpStream"]
                .iter()
                .any(|needle| text.contains(needle))
        })
        .collect();
    assert!(
        offenders.is_empty(),
        "network code outside backends: {offenders:?}"
    );
}
