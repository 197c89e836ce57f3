import json
import struct

import numpy as np
import pytest

from agra import checkpoint as ck
from agra import model as M
from agra.bank import ClassDistributionBank
from agra.config import RunConfig
from agra.errors import ParseError, VersionError


def make_checkpoint(seed=0, with_bank=True):
    cfg = RunConfig.from_dict({"seed": seed})
    params = M.init_params(cfg.model, seed)
    bank = None
    if with_bank:
        bank = ClassDistributionBank(np.random.default_rng(seed).standard_normal((2, 7, 6, 64)), alpha=0.2,
                                     recluster_period=5, seed=seed)
    return ck.Checkpoint(params, bank, cfg.to_dict())


def test_round_trip_byte_identical(tmp_path):
    c = make_checkpoint()
    ck.save(c, tmp_path / "a.agra")
    back = ck.load(tmp_path / "a.agra")
    ck.save(back, tmp_path / "b.agra")
    assert (tmp_path / "a.agra").read_bytes() == (tmp_path / "b.agra").read_bytes()
    for k in c.params:
        assert back.params[k].tobytes() == c.params[k].tobytes()
    assert back.bank.means.tobytes() == c.bank.means.tobytes()
    assert (back.bank.alpha, back.bank.recluster_period, back.bank.seed) == (0.2, 5, 0)
    assert back.config == c.config


def test_round_trip_without_bank():
    c = make_checkpoint(with_bank=False)
    back = ck.loads(ck.dumps(c))
    assert back.bank is None and set(back.params) == set(c.params)


def test_layout_is_readable_without_the_package():
    data = ck.dumps(make_checkpoint(1))
    assert data[:8] == b"AGRACKPT"
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n])
    entry = next(e for e in manifest["arrays"] if e["name"] == "A_intra")
    start = 16 + n + entry["offset"]
    A = np.frombuffer(data[start:start + entry["nbytes"]], dtype="<f8").reshape(entry["shape"])
    assert np.array_equal(A, M.init_params(M.ModelConfig(), 1)["A_intra"])
    assert manifest["config_hash"] == ck.config_hash(manifest["config"])


def test_save_returns_file_digest(tmp_path):
    import hashlib

    digest = ck.save(make_checkpoint(), tmp_path / "c.agra")
    assert digest == hashlib.sha256((tmp_path / "c.agra").read_bytes()).hexdigest()


def test_expected_hash_mismatch():
    c = make_checkpoint()
    data = ck.dumps(c)
    assert ck.loads(data, expected_hash=c.config_hash).config_hash == c.config_hash
    with pytest.raises(VersionError):
        ck.loads(data, expected_hash="0" * 64)


def test_tampered_config_detected():
    data = bytearray(ck.dumps(make_checkpoint()))
    i = data.find(b'"lr_d": 0.001')
    data[i:i + 13] = b'"lr_d": 0.002'
    with pytest.raises(VersionError):
        ck.loads(bytes(data))


def test_bad_magic_and_truncation():
    data = ck.dumps(make_checkpoint())
    with pytest.raises(ParseError):
        ck.loads(b"NOTACKPT" + data[8:])
    with pytest.raises(ParseError):
        ck.loads(data[:12])
    with pytest.raises(ParseError):
        ck.loads(data[:-8])
    with pytest.raises(ParseError):
        ck.loads(data[:40])


def test_version_mismatch():
    data = ck.dumps(make_checkpoint())
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n])
    manifest["version"] = 2
    head = json.dumps(manifest, sort_keys=True).encode()
    with pytest.raises(VersionError):
        ck.loads(data[:8] + struct.pack("<Q", len(head)) + head + data[16 + n:])
