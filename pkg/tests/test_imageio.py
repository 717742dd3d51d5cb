import io
import json
import tarfile

import pytest
from hypothesis import given, settings, strategies as st

from debloatfs import MB, account_sizes, load_image, store_image
from debloatfs.errors import BadManifest, CorruptBlob, IoError, MissingBlob
from debloatfs.fixtures import pair_fleet, write_fixture
from debloatfs.imageio import image_from_layers, parse_layer, read_manifest, serialize_layer
from debloatfs.layers import FileEntry, sha256_digest


@pytest.fixture
def pair_dir(tmp_path):
    write_fixture("pair", tmp_path)
    return tmp_path / "pair-c1"


def test_load_pair(pair_dir):
    bundle, fs = load_image(pair_dir)
    assert len(fs.root_layers) == 2
    assert sum(len(l.entries) for l in fs.root_layers) == 4
    assert account_sizes([fs]).total == 10 * MB
    assert bundle.manifest.layer_digests == [l.digest for l in reversed(fs.root_layers)]
    assert not fs.write_layer.entries


def test_round_trip(pair_dir, tmp_path):
    _, fs = load_image(pair_dir)
    manifest = store_image(fs, tmp_path / "copy")
    assert manifest.layer_digests == read_manifest(pair_dir).layer_digests
    _, again = load_image(tmp_path / "copy")
    for a, b in zip(fs.root_layers, again.root_layers):
        assert a.entries == b.entries


def test_empty_layer(tmp_path):
    store_image(image_from_layers("empty", [[]]), tmp_path / "e")
    _, fs = load_image(tmp_path / "e")
    assert account_sizes([fs]).total == 0


def test_tampered_blob(pair_dir):
    digest = read_manifest(pair_dir).layer_digests[0]
    blob = pair_dir / "blobs/sha256" / digest.split(":")[1]
    data = bytearray(blob.read_bytes())
    data[600] ^= 1
    blob.write_bytes(bytes(data))
    with pytest.raises(CorruptBlob, match=digest):
        load_image(pair_dir)


def test_missing_blob(pair_dir):
    digest = read_manifest(pair_dir).layer_digests[1]
    (pair_dir / "blobs/sha256" / digest.split(":")[1]).unlink()
    with pytest.raises(MissingBlob):
        load_image(pair_dir)


@pytest.mark.parametrize("doc", [{"image_name": "x"}, {"image_name": "x", "layers": ["md5:00"], "base_depth": 0},
                                 {"image_name": "x", "layers": [], "base_depth": -1}])
def test_bad_manifest(tmp_path, doc):
    tmp_path.joinpath("manifest.json").write_text(json.dumps(doc))
    with pytest.raises(BadManifest):
        load_image(tmp_path)


def test_store_refuses_nonempty(pair_dir, tmp_path):
    _, fs = load_image(pair_dir)
    (tmp_path / "busy").mkdir()
    (tmp_path / "busy/file").write_text("x")
    with pytest.raises(IoError):
        store_image(fs, tmp_path / "busy")


def test_parse_rejects_duplicates():
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.PAX_FORMAT) as tar:
        for data in (b"1", b"2"):
            info = tarfile.TarInfo("a")
            info.size = len(data)
            tar.addfile(info, io.BytesIO(data))
    with pytest.raises(CorruptBlob):
        parse_layer(buf.getvalue())


def test_parse_rejects_devices():
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tar:
        info = tarfile.TarInfo("dev/null")
        info.type = tarfile.CHRTYPE
        tar.addfile(info)
    with pytest.raises(CorruptBlob):
        parse_layer(buf.getvalue())


names = st.sampled_from(["/a", "/b", "/c/d", "/c/e", "/z"])
entries = st.dictionaries(names, st.binary(max_size=64), max_size=5)


@settings(max_examples=50)
@given(entries)
def test_canonical_serialization(files):
    items = [FileEntry.regular(p, data) for p, data in files.items()]
    a = serialize_layer(items)
    b = serialize_layer(list(reversed(items)))
    assert a == b
    assert sha256_digest(a) == sha256_digest(b)
    assert sorted(parse_layer(a), key=lambda e: e.path) == sorted(items, key=lambda e: e.path)


def test_fleet_fixture_shares_digests(tmp_path):
    write_fixture("pair", tmp_path)
    assert read_manifest(tmp_path / "pair-c1").layer_digests == read_manifest(tmp_path / "pair-c2").layer_digests
    fleet, _ = pair_fleet()
    assert [l.layer_id for l in fleet[0].root_layers] == [l.layer_id for l in fleet[1].root_layers]
