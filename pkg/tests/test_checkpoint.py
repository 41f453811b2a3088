import struct

import numpy as np
import pytest
import torch

from vaesim.checkpoint import (
    MAGIC,
    TrainedState,
    load_records,
    load_state,
    save_records,
    save_state,
)
from vaesim.errors import FormatError, InvalidArgument, IoError, UnsupportedVersion
from vaesim.proto_bank import PrototypeBank
from vaesim.vae_core import ConvDecoder, ConvEncoder


@pytest.fixture()
def trained_like_state():
    torch.manual_seed(0)
    encoder = ConvEncoder(latent_dim=6)
    decoder = ConvDecoder(latent_dim=6, n_conditions=4)
    bank = PrototypeBank(4, eta=0.9, similarity="dot", ema_convention="standard")
    bank.init_from_batch(torch.randn(16, 6), seed=3)
    return encoder, decoder, bank


class TestRecords:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        records = {
            "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
            "b.bias": rng.standard_normal(7).astype(np.float32),
            "scalar": np.float32(2.75),
        }
        path = tmp_path / "r.vsim"
        save_records(records, path)
        loaded = load_records(path)
        assert set(loaded) == set(records)
        for key in records:
            assert loaded[key].shape == np.asarray(records[key]).shape
            assert loaded[key].tobytes() == np.asarray(records[key], dtype="<f4").tobytes()

    def test_save_load_save_is_identity_on_bytes(self, tmp_path):
        records = {"x": np.arange(6, dtype=np.float32).reshape(2, 3)}
        p1, p2 = tmp_path / "a.vsim", tmp_path / "b.vsim"
        save_records(records, p1)
        save_records(load_records(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vsim"
        path.write_bytes(b"XXXX" + struct.pack("<II", 1, 0))
        with pytest.raises(FormatError):
            load_records(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.vsim"
        save_records({"x": np.zeros(8, np.float32)}, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 5])
        with pytest.raises(FormatError):
            load_records(path)

    def test_future_version_rejected(self, tmp_path):
        path = tmp_path / "v.vsim"
        path.write_bytes(MAGIC + struct.pack("<II", 2, 0))
        with pytest.raises(UnsupportedVersion):
            load_records(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "g.vsim"
        save_records({}, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_records(path)

    def test_missing_path(self, tmp_path):
        with pytest.raises(IoError):
            load_records(tmp_path / "nope.vsim")


class TestState:
    def test_state_round_trip_restores_every_array(self, tmp_path, trained_like_state):
        encoder, decoder, bank = trained_like_state
        path = tmp_path / "model.vsim"
        save_state(path, encoder, decoder, bank, extra={"epochs": 12})
        state = load_state(path)
        assert isinstance(state, TrainedState)
        for module, loaded in ((encoder, state.encoder), (decoder, state.decoder)):
            for key, value in module.state_dict().items():
                if key.endswith("num_batches_tracked"):
                    continue
                assert torch.equal(value, loaded.state_dict()[key]), key
        assert torch.equal(bank.Q, state.bank.Q)
        assert state.bank.eta == pytest.approx(0.9)
        assert state.bank.similarity_mode == "dot"
        assert state.bank.ema_convention == "standard"
        assert state.meta["epochs"] == 12

    def test_forward_pass_identical_after_reload(self, tmp_path, trained_like_state):
        encoder, decoder, bank = trained_like_state
        path = tmp_path / "model.vsim"
        save_state(path, encoder, decoder, bank)
        state = load_state(path)
        x = torch.rand(3, 1, 32, 32)
        encoder.eval()
        with torch.no_grad():
            mu_a, lv_a = encoder(x)
            mu_b, lv_b = state.encoder(x)
        assert torch.equal(mu_a, mu_b) and torch.equal(lv_a, lv_b)

    def test_uninitialized_bank_cannot_be_saved(self, tmp_path):
        encoder = ConvEncoder(latent_dim=4)
        decoder = ConvDecoder(latent_dim=4, n_conditions=2)
        with pytest.raises(InvalidArgument):
            save_state(tmp_path / "x.vsim", encoder, decoder, PrototypeBank(2))

    def test_missing_meta_record_is_a_format_error(self, tmp_path, trained_like_state):
        encoder, decoder, bank = trained_like_state
        path = tmp_path / "model.vsim"
        save_state(path, encoder, decoder, bank)
        records = load_records(path)
        del records["meta.latent_dim"]
        save_records(records, path)
        with pytest.raises(FormatError):
            load_state(path)
