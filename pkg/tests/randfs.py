"""Random layered-filesystem instances and a checker that replays them against the oracle."""

from __future__ import annotations

import posixpath
import random
from dataclasses import dataclass, field

from debloatfs import engine
from debloatfs.convert import convert_fully_sharing, convert_no_sharing, convert_semi_sharing
from debloatfs.errors import DebloatError
from debloatfs.imageio import ensure_digest, image_layer_id, layer_blob
from debloatfs.layers import ContainerFs, FileEntry, Kind, Layer, Role, sha256_digest
from debloatfs.pipeline import AccessTrace, TraceEvent, export_fleet, verify

from oracle import Oracle, describe

DIRS = ["/a", "/b", "/a/c"]
FILES = [f"{d}/f{i}" for d in ("", "/a", "/b", "/a/c") for i in range(12)]  # 48 regular paths
LINKS = ["/l0", "/l1", "/l2", "/a/l3", "/b/l4"]
ABSENT = ["/nope", "/a/zz", "/q/r", "/"]
POOL = DIRS + FILES + LINKS  # 56 distinct paths
MODES = ("no_sharing", "fully_sharing", "semi_sharing")


@dataclass
class Instance:
    layers: list[list[FileEntry]]            # all distinct image layers, index order = stack order bottom-up
    stacks: list[list[int]]                  # per container: layer indices bottom-up
    mode: str
    base_depths: list[int]
    steps: list[tuple[int, TraceEvent]]      # (container index, event), interleaved


def random_instance(rng: random.Random) -> Instance:
    n = rng.randint(1, 6)
    layers = []
    for li in range(n):
        entries = {}
        for d in DIRS:
            if rng.random() < 0.3:
                entries[d] = FileEntry.directory(d, rng.choice([0o755, 0o700, 0o750]))
        for p in rng.sample(FILES, rng.randint(0, 16)):
            data = f"{p}@{li}:".encode() * rng.randint(0, 6)
            entries[p] = FileEntry.regular(p, data, rng.choice([0o644, 0o755, 0o600]))
        for p in LINKS:
            if rng.random() < 0.25:
                target = rng.choice(POOL + ABSENT[:2])
                if rng.random() < 0.4:
                    target = _relative(p, target)
                entries[p] = FileEntry.symlink(p, target)
        layers.append(list(entries.values()))

    n_containers = rng.choice([1, 2, 2])
    stacks = [list(range(n))]
    if n_containers == 2:
        sub = sorted(rng.sample(range(n), rng.randint(1, n)))
        stacks.append(sub)
    mode = rng.choice(MODES)
    base_depths = [rng.randint(0, len(s) - 1) if mode == "semi_sharing" else 0 for s in stacks]

    per = []
    for ci in range(len(stacks)):
        evs = []
        for _ in range(rng.randint(0, 25)):
            op = rng.choices(["read", "stat", "list", "write"], [0.5, 0.2, 0.1, 0.2])[0]
            path = rng.choice(ABSENT) if rng.random() < 0.12 else rng.choice(POOL)
            payload = f"SECRET-{rng.getrandbits(64):016x}".encode() if op == "write" else None
            evs.append(TraceEvent(op, path, payload))
        per.append(evs)
    steps = []
    cursors = [0] * len(per)
    while any(c < len(e) for c, e in zip(cursors, per)):
        ci = rng.choice([i for i, (c, e) in enumerate(zip(cursors, per)) if c < len(e)])
        steps.append((ci, per[ci][cursors[ci]]))
        cursors[ci] += 1
    return Instance(layers, stacks, mode, base_depths, steps)


def _relative(src: str, target: str) -> str:
    return posixpath.relpath(target, posixpath.dirname(src))


def build_fleet(inst: Instance) -> list[ContainerFs]:
    objs = []
    for entries in inst.layers:
        layer = Layer.image(entries)
        layer.layer_id = image_layer_id(ensure_digest(layer))
        objs.append(layer)
    return [ContainerFs(f"C{ci + 1}", [objs[i] for i in reversed(stack)]) for ci, stack in enumerate(inst.stacks)]


def convert_fleet(fleet, inst: Instance):
    if inst.mode == "fully_sharing":
        return convert_fully_sharing(fleet)
    if inst.mode == "semi_sharing":
        return [convert_semi_sharing(fs, b) for fs, b in zip(fleet, inst.base_depths)]
    return [convert_no_sharing(fs) for fs in fleet]


def _engine_outcome(fs, ev):
    try:
        if ev.op == "read":
            return ("ok", engine.read(fs, ev.path))
        if ev.op == "stat":
            return ("ok", describe(engine.stat(fs, ev.path)))
        if ev.op == "list":
            return ("ok", engine.list_dir(fs, ev.path))
        engine.write(fs, ev.path, ev.payload)
        return ("ok", None)
    except DebloatError as exc:
        return ("err", type(exc).__name__)


def _view(fs, p):
    """Non-mutating resolution of ``p`` in the engine's current state."""
    found = engine.peek(fs, p)
    if found is None:
        pre = p + "/"
        if p == "/" or any(k.startswith(pre) for l in fs.reachable_layers() for k in l.entries):
            return (Kind.DIRECTORY,)
        return None
    return describe(found[1])


def _oracle_view(orc: Oracle, p):
    out, _ = orc.stat(p)
    return out[1] if out[0] == "ok" else None


def _content_multiset(fleet):
    seen, bag = set(), {}
    for fs in fleet:
        for layer in fs.reachable_layers():
            if id(layer) in seen or layer.role is Role.WRITE:
                continue
            seen.add(id(layer))
            for e in layer.entries.values():
                if e.kind is not Kind.DIRECTORY:
                    key = (e.path, e.kind, e.content_digest, e.link_target)
                    bag[key] = bag.get(key, 0) + 1
    return bag


@dataclass
class Result:
    events: int = 0
    mismatches: list = field(default_factory=list)
    view_mismatches: list = field(default_factory=list)
    conservation: list = field(default_factory=list)
    verify_failures: list = field(default_factory=list)
    minimality: list = field(default_factory=list)
    warm_checked: int = 0
    warm_violations: list = field(default_factory=list)
    probe_violations: list = field(default_factory=list)
    leaks: list = field(default_factory=list)
    writes: int = 0


def run_instance(inst: Instance, check_views: bool = True) -> Result:
    res = Result()
    fleet = convert_fleet(build_fleet(inst), inst)
    oracles = [Oracle([inst.layers[i] for i in stack]) for stack in inst.stacks]
    debloat_ids = {l.layer_id for fs in fleet for l in fs.root_layers if l.role is Role.DEBLOATING}
    baseline = _content_multiset(fleet)

    def check_all_views(tag):
        for ci, (fs, orc) in enumerate(zip(fleet, oracles)):
            for p in POOL + ABSENT:
                got, want = _view(fs, p), _oracle_view(orc, p)
                if got != want:
                    res.view_mismatches.append((tag, ci, p, got, want))

    if check_views:
        check_all_views("after-convert")
    accessed = [set() for _ in fleet]
    ok_events = [[] for _ in fleet]
    served = set()
    for step, (ci, ev) in enumerate(inst.steps):
        fs, orc = fleet[ci], oracles[ci]
        start = len(fs.access_record)
        got = _engine_outcome(fs, ev)
        if ev.op == "read":
            want, touched = orc.read(ev.path)
            accessed[ci].update(p for p, src, kind in touched if src == "image" and kind is Kind.REGULAR)
        elif ev.op == "stat":
            want, hop = orc.stat(ev.path)
            if want[0] == "ok" and hop and hop[1] == "image" and hop[2] is Kind.REGULAR:
                accessed[ci].add(hop[0])
        elif ev.op == "list":
            want = orc.list(ev.path)
        else:
            want = orc.write(ev.path, ev.payload)
            res.writes += 1
        res.events += 1
        if got != want:
            res.mismatches.append((step, ci, ev, got, want))
        if want[0] == "ok":
            expect = None
            if ev.op == "read":
                expect = sha256_digest(want[1])
            ok_events[ci].append(TraceEvent(ev.op, ev.path, ev.payload, expect))

        for rec in fs.access_record[start:]:
            if rec.probe_count < 1:
                res.probe_violations.append((step, rec))
            if rec.op in ("read", "stat") and rec.hit in debloat_ids:
                key = (rec.hit, rec.path)
                if key in served:
                    res.warm_checked += 1
                    if rec.serving_probes != 1:
                        res.warm_violations.append((step, rec.path, rec.serving_probes))
                served.add(key)

        if check_views:
            check_all_views(f"step {step}")
            if _content_multiset(fleet) != baseline:
                res.conservation.append(step)

    exported = export_fleet(fleet)
    for ci, fs in enumerate(exported):
        rep = verify(fs, AccessTrace(ok_events[ci]))
        if not rep.passed:
            res.verify_failures.append((ci, rep.failures))
        if inst.mode == "no_sharing":
            (layer,) = fs.root_layers
            regular = {p for p, e in layer.entries.items() if e.kind is Kind.REGULAR}
            if regular != accessed[ci]:
                res.minimality.append((ci, sorted(regular ^ accessed[ci])))
            for p in regular & accessed[ci]:
                if layer.entries[p].content != oracles[ci].image[p].content:
                    res.minimality.append((ci, p, "content"))
        payloads = [ev.payload for c, ev in inst.steps if ev.op == "write"]
        digests = {e.content_digest for l in fs.root_layers for e in l.entries.values()}
        for layer in fs.root_layers:
            blob = layer_blob(layer)
            for pl in payloads:
                if pl in blob or sha256_digest(pl) in digests:
                    res.leaks.append((ci, layer.layer_id, pl))
    return res
