import numpy as np
import pytest

from hafuse.autodiff import Tensor
from hafuse.checkpoint import FORMAT_VERSION, load_checkpoint, load_nets, save_nets
from hafuse.discriminator import DetailedConfig, SalientConfig
from hafuse.errors import FormatError
from hafuse.fusion import build_nets
from hafuse.generator import GeneratorConfig


def small_nets(variant="full", seed=0):
    return build_nets(GeneratorConfig(scales=2, base_channels=4), SalientConfig(), DetailedConfig(),
                      variant, 32, seed=seed)


class TestRoundTrip:
    @pytest.mark.parametrize("variant", ["full", "only_DD", "dual_DS", "no_attention"])
    def test_bit_exact(self, tmp_path, variant):
        nets = small_nets(variant, seed=3)
        save_nets(tmp_path / "a.ckpt", nets, 32)
        back = load_nets(tmp_path / "a.ckpt")
        assert set(back.slots()) == set(nets.slots())
        for slot, net in nets.slots().items():
            other = back.slots()[slot].params
            for name in net.params:
                assert net.params[name].data.tobytes() == other[name].data.tobytes()
        save_nets(tmp_path / "b.ckpt", back, 32)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_configs_restored(self, tmp_path):
        nets = small_nets()
        save_nets(tmp_path / "a.ckpt", nets, 32, extra={"epoch": 2})
        configs, arrays = load_checkpoint(tmp_path / "a.ckpt")
        assert configs["generator"]["scales"] == 2 and configs["extra"] == {"epoch": 2}
        assert all(a.dtype == np.float32 for a in arrays.values())
        assert load_nets(tmp_path / "a.ckpt").generator.cfg == nets.generator.cfg


    def test_parameter_count_and_forward_identity(self, tmp_path):
        nets = small_nets(seed=1)
        save_nets(tmp_path / "a.ckpt", nets, 32)
        _, arrays = load_checkpoint(tmp_path / "a.ckpt")
        assert len(arrays) == sum(len(net.params) for net in nets.slots().values())
        back = load_nets(tmp_path / "a.ckpt")
        x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 1, 32, 32)), dtype=np.float32)
        assert nets.generator(x, x).data.tobytes() == back.generator(x, x).data.tobytes()
        assert nets.d_vi(x).data.tobytes() == back.d_vi(x).data.tobytes()


class TestCorruption:
    def _saved(self, tmp_path):
        path = tmp_path / "a.ckpt"
        save_nets(path, small_nets(), 32)
        return path

    def test_payload_flip_detected(self, tmp_path):
        path = self._saved(tmp_path)
        buf = bytearray(path.read_bytes())
        buf[-1] ^= 0xFF
        path.write_bytes(bytes(buf))
        with pytest.raises(FormatError, match="checksum"):
            load_checkpoint(path)
        load_checkpoint(path, verify=False)

    def test_wrong_version(self, tmp_path):
        path = self._saved(tmp_path)
        path.write_bytes(path.read_bytes().replace(FORMAT_VERSION.encode(), b"HAFUSE-CKPT-9", 1))
        with pytest.raises(FormatError, match="version") as info:
            load_checkpoint(path)
        assert info.value.offset == 0

    def test_truncated(self, tmp_path):
        path = self._saved(tmp_path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_checkpoint(path)
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)
