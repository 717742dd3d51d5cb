"""Deterministic example images and workloads.

``pair`` is two containers sharing two image layers, four files in all
(f1..f4 of 1, 2, 3 and 4 MB).  ``nginx`` is a synthetic web-server image
with a realistic amount of unused payload.  ``semi5`` is a five-layer image
whose bottom four layers come from a base image.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .imageio import image_from_layers, store_image
from .layers import MB, ContainerFs, FileEntry, sha256_digest
from .pipeline import AccessTrace, TraceEvent

KB = 1 << 10


def payload(name: str, size: int) -> bytes:
    return hashlib.shake_256(name.encode()).digest(size) if size else b""


def _reg(path: str, size: int, mode: int = 0o644) -> FileEntry:
    return FileEntry.regular(path, payload(path, size), mode)


def _text(path: str, text: str, mode: int = 0o644) -> FileEntry:
    return FileEntry.regular(path, text.encode(), mode)


def pair_fleet() -> tuple[list[ContainerFs], list[AccessTrace]]:
    """Two containers on the same two image layers; C1 reads f1,f2 and C2 reads f2,f3."""
    upper = [_reg("/f1", 1 * MB), _reg("/f2", 2 * MB)]
    lower = [_reg("/f3", 3 * MB), _reg("/f4", 4 * MB)]
    c1 = image_from_layers("C1", [lower, upper])
    c2 = ContainerFs("C2", list(c1.root_layers))
    return [c1, c2], [AccessTrace.reads("/f1", "/f2"), AccessTrace.reads("/f2", "/f3")]


def _dirs(*paths):
    return [FileEntry.directory(p) for p in paths]


def nginx_image() -> ContainerFs:
    libdir = "/usr/lib/x86_64-linux-gnu"
    base = _dirs("/bin", "/etc", "/usr", "/usr/bin", "/usr/lib", libdir, "/usr/share",
                 "/usr/share/doc", "/usr/share/locale", "/usr/share/zoneinfo", "/usr/share/perl5", "/var",
                 "/var/lib", "/var/lib/dpkg", "/var/log", "/var/cache") + [
        _reg("/bin/sh", 125 * KB, 0o755),
        _reg("/bin/bash", 1210 * KB, 0o755),
        _reg("/usr/bin/perl", 3500 * KB, 0o755),
        _reg("/usr/bin/apt-get", 180 * KB, 0o755),
        _reg(f"{libdir}/libc.so.6", 1900 * KB, 0o755),
        _reg(f"{libdir}/libm.so.6", 900 * KB, 0o755),
        _reg(f"{libdir}/libz.so.1.2.13", 120 * KB, 0o755),
        FileEntry.symlink(f"{libdir}/libz.so.1", "libz.so.1.2.13"),
        _reg(f"{libdir}/libcrypto.so.3", 4400 * KB, 0o755),
        _reg(f"{libdir}/libssl.so.3", 690 * KB, 0o755),
        _reg(f"{libdir}/libpcre2-8.so.0.11.2", 610 * KB, 0o755),
        FileEntry.symlink(f"{libdir}/libpcre2-8.so.0", "libpcre2-8.so.0.11.2"),
        _reg("/usr/share/doc/copyright-bundle", 1800 * KB),
        _reg("/usr/share/locale/locale-archive", 3000 * KB),
        _reg("/usr/share/zoneinfo/UTC", 1 * KB),
        _reg("/usr/share/perl5/modules.bundle", 3200 * KB),
        _reg("/var/lib/dpkg/status", 450 * KB),
        _text("/etc/passwd", "root:x:0:0:root:/root:/bin/sh\nnginx:x:101:101::/nonexistent:/bin/false\n"),
        _text("/etc/group", "root:x:0:\nnginx:x:101:\n"),
    ]
    modules = [_reg(f"/usr/lib/nginx/modules/ngx_{m}_module.so", 210 * KB, 0o755)
               for m in ("http_geoip", "http_image_filter", "http_xslt_filter", "http_perl", "mail", "stream")]
    server = _dirs("/etc/nginx", "/etc/nginx/conf.d", "/usr/sbin", "/usr/lib/nginx",
                   "/usr/lib/nginx/modules", "/usr/share/nginx", "/usr/share/nginx/html",
                   "/var/log/nginx", "/var/cache/nginx", "/docker-entrypoint.d") + modules + [
        _reg("/usr/sbin/nginx", 1350 * KB, 0o755),
        _text("/etc/nginx/nginx.conf", "user nginx;\nworker_processes auto;\n"
              "events { worker_connections 1024; }\nhttp { include /etc/nginx/mime.types;"
              " include /etc/nginx/conf.d/*.conf; }\n"),
        _reg("/etc/nginx/mime.types", 5 * KB),
        _text("/etc/nginx/conf.d/default.conf", "server { listen 80; root /usr/share/nginx/html; }\n"),
        _text("/usr/share/nginx/html/index.html", "<h1>Welcome to nginx!</h1>\n"),
        _text("/usr/share/nginx/html/50x.html", "<h1>An error occurred.</h1>\n"),
        _text("/docker-entrypoint.sh", "#!/bin/sh\nset -e\nexec \"$@\"\n", 0o755),
        _text("/docker-entrypoint.d/10-listen-on-ipv6.sh", "#!/bin/sh\nexit 0\n", 0o755),
        _text("/docker-entrypoint.d/20-envsubst.sh", "#!/bin/sh\nexit 0\n", 0o755),
        FileEntry.symlink("/var/log/nginx/access.log", "/dev/stdout"),
        FileEntry.symlink("/var/log/nginx/error.log", "/dev/stderr"),
    ]
    site = [
        _text("/etc/nginx/conf.d/default.conf",
              "server { listen 80; root /usr/share/nginx/html;\n"
              "  location /proxy { proxy_pass http://127.0.0.1:8080; } }\n"),
        _text("/usr/share/nginx/html/index.html", "<h1>Hello, NGINX!</h1>\n"),
    ]
    return image_from_layers("nginx-like", [base, server, site], base_depth=1)


NGINX_INDEX = b"<h1>Hello, NGINX!</h1>\n"


def nginx_trace() -> AccessTrace:
    """Start-up plus serving static content and a proxy pass."""
    libdir = "/usr/lib/x86_64-linux-gnu"
    events = [TraceEvent("read", p) for p in (
        "/docker-entrypoint.sh", "/bin/sh", f"{libdir}/libc.so.6")]
    events.append(TraceEvent("list", "/docker-entrypoint.d"))
    events += [TraceEvent("read", p) for p in (
        "/docker-entrypoint.d/10-listen-on-ipv6.sh", "/docker-entrypoint.d/20-envsubst.sh",
        "/usr/sbin/nginx", f"{libdir}/libpcre2-8.so.0", f"{libdir}/libssl.so.3",
        f"{libdir}/libcrypto.so.3", f"{libdir}/libz.so.1", "/etc/passwd", "/etc/group",
        "/etc/nginx/nginx.conf", "/etc/nginx/mime.types", "/etc/nginx/conf.d/default.conf")]
    events += [
        TraceEvent("stat", "/var/log/nginx/access.log"),
        TraceEvent("stat", "/var/log/nginx/error.log"),
        TraceEvent("stat", "/var/cache/nginx"),
        TraceEvent("write", "/var/run/nginx.pid", b"1\n"),
        TraceEvent("read", "/usr/share/nginx/html/index.html", expect=sha256_digest(NGINX_INDEX)),
        TraceEvent("read", "/usr/share/nginx/html/50x.html"),
        TraceEvent("read", "/var/run/nginx.pid"),
    ]
    return AccessTrace(events)


def semi5_image() -> ContainerFs:
    """Five layers, bottom four shared with a base image."""
    base = [[_reg(f"/base/l{i}/used.bin", 64 * KB), _reg(f"/base/l{i}/unused.bin", 256 * KB)]
            for i in range(1, 5)]
    app = [_reg("/app/main", 512 * KB, 0o755), _reg("/app/unused-assets.bin", 2 * MB)]
    return image_from_layers("semi5", [*base, app], base_depth=4)


def semi5_trace() -> AccessTrace:
    return AccessTrace.reads("/app/main", "/base/l1/used.bin", "/base/l3/used.bin")


FIXTURES = ("pair", "nginx", "semi5")


def write_fixture(name: str, out_dir) -> list[Path]:
    """Write fixture images (and their ``<image>.trace.jsonl`` workloads) under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if name == "pair":
        fleet, traces = pair_fleet()
        pairs = [(fs, t, f"pair-{fs.container_id.lower()}") for fs, t in zip(fleet, traces)]
    elif name == "nginx":
        pairs = [(nginx_image(), nginx_trace(), "nginx")]
    elif name == "semi5":
        pairs = [(semi5_image(), semi5_trace(), "semi5")]
    else:
        raise ValueError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    written = []
    for fs, trace, dirname in pairs:
        store_image(fs, out / dirname, image_name=dirname)
        trace.save(out / f"{dirname}.trace.jsonl")
        written.append(out / dirname)
    return written
