"""Synthetic connection logs for fixtures and rate measurements.

Also converts netfilter-style kernel log lines into the TSV layout the
report expects. The converter only understands the ``KEY=value`` fields
it writes itself; it is a fixture tool, not a syslog parser.
"""

from __future__ import annotations

import re

import numpy as np

LOG_COLUMNS = ("timestamp", "userID", "SrcIP", "DstIP", "DstPort", "proto")
_NF_FIELDS = {"UID": "userID", "SRC": "SrcIP", "DST": "DstIP", "DPT": "DstPort",
              "PROTO": "proto"}
_NF_RE = re.compile(r"(\w+)=(\S*)")


def _ip(x: int) -> str:
    return f"{x >> 24 & 255}.{x >> 16 & 255}.{x >> 8 & 255}.{x & 255}"


def generate_connection_log(n: int, seed: int = 0, users: int = 200,
                            destinations: int = 5000, zipf_exponent: float = 1.5) -> str:
    """TSV log text of ``n`` connections with heavy-tailed user and destination use."""
    rng = np.random.default_rng(seed)
    u = (rng.zipf(zipf_exponent, n) - 1) % users
    d = (rng.zipf(zipf_exponent, n) - 1) % destinations
    ports = rng.choice([22, 53, 80, 443, 8080], size=n, p=[0.05, 0.1, 0.2, 0.6, 0.05])
    protos = np.where(ports == 53, "UDP", "TCP")
    hosts = rng.integers(1, 250, n)
    t0 = 1_697_587_200
    secs = np.sort(rng.integers(0, 86_400, n))
    lines = ["\t".join(LOG_COLUMNS)]
    for k in range(n):
        lines.append(f"{t0 + int(secs[k])}\tuser{int(u[k]):04d}\t10.1.0.{int(hosts[k])}\t"
                     f"{_ip(0x2D000000 + int(d[k]) * 7919)}\t{int(ports[k])}\t{protos[k]}")
    return "\n".join(lines) + "\n"


def generate_netfilter_lines(n: int, seed: int = 0) -> list[str]:
    """Raw kernel-log style lines carrying the same fields as the TSV log."""
    tsv = generate_connection_log(n, seed).splitlines()[1:]
    out = []
    for line in tsv:
        ts, user, src, dst, port, proto = line.split("\t")
        out.append(f"{ts} gw kernel: NEWCONN UID={user} IN= OUT=eth0 SRC={src} DST={dst} "
                   f"PROTO={proto} SPT=40000 DPT={port}")
    return out


def netfilter_to_tsv(lines) -> str:
    out = ["\t".join(LOG_COLUMNS)]
    for line in lines:
        head, _, rest = line.partition(" ")
        kv = dict(_NF_RE.findall(rest))
        row = {"timestamp": head}
        row.update({col: kv.get(key, "") for key, col in _NF_FIELDS.items()})
        out.append("\t".join(row[c] for c in LOG_COLUMNS))
    return "\n".join(out) + "\n"
