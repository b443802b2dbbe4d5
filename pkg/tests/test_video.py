import numpy as np
import pytest

from cvrl import Dataset, RawVideo, extract_clip, generate_synthetic_dataset, load_dataset, save_dataset
from cvrl.exceptions import BoundsError, ConfigurationError, FormatError


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_dataset(3, 4, 64, 32, 32, seed=5)


def ramp_video(T=250, label=0, video_id=0):
    frames = np.zeros((T, 4, 4, 3), dtype=np.uint8)
    frames[...] = (np.arange(T) % 256).astype(np.uint8)[:, None, None, None]
    return RawVideo(frames, label, video_id)


class TestGeneration:
    def test_counts_and_balance(self, small):
        assert len(small) == 12
        assert np.bincount(small.labels).tolist() == [4, 4, 4]
        assert [v.video_id for v in small] == list(range(12))
        assert small.geometry == (64, 32, 32)
        assert small[0].frames.dtype == np.uint8

    def test_determinism(self, small):
        again = generate_synthetic_dataset(3, 4, 64, 32, 32, seed=5)
        assert again == small
        other = generate_synthetic_dataset(3, 4, 64, 32, 32, seed=6)
        assert other != small

    @pytest.mark.parametrize(
        "args",
        [(1, 10, 128, 64, 64), (2, 1, 63, 64, 64), (2, 1, 64, 31, 64), (2, 1, 64, 64, 31), (2, 0, 64, 64, 64)],
    )
    def test_bad_geometry(self, args):
        with pytest.raises(ConfigurationError):
            generate_synthetic_dataset(*args, seed=0)

    def test_frames_are_read_only(self, small):
        with pytest.raises(ValueError):
            small[0].frames[0, 0, 0, 0] = 1

    def test_videos_move(self, small):
        # consecutive frames differ by more than sensor noise somewhere
        f = small[0].frames.astype(int)
        assert np.abs(f[1:] - f[:-1]).max() > 60


class TestExtractClip:
    def test_covers_strided_frames(self):
        video = ramp_video()
        clip = extract_clip(video, 0, 16, 2)
        assert clip.frames.shape == (16, 4, 4, 3)
        np.testing.assert_array_equal(clip.frames[:, 0, 0, 0] * 255, np.arange(0, 32, 2))
        assert clip.start_frame == 0 and clip.source_video_id == 0

    def test_direct_indexing(self, small):
        video = small[3]
        clip = extract_clip(video, 7, 10, 3)
        for k in range(10):
            np.testing.assert_array_equal(clip.frames[k], video.frames[7 + 3 * k] / np.float32(255))

    def test_scaling_endpoints(self):
        frames = np.zeros((4, 2, 2, 3), dtype=np.uint8)
        frames[1] = 255
        clip = extract_clip(RawVideo(frames, 0, 0), 0, 4, 1)
        assert clip.frames[1].min() == 1.0
        assert clip.frames[0].max() == 0.0
        assert clip.frames.dtype == np.float32

    def test_out_of_range(self):
        video = ramp_video()
        with pytest.raises(BoundsError):
            extract_clip(video, 240, 16, 2)
        with pytest.raises(BoundsError):
            extract_clip(video, -1, 4, 1)
        extract_clip(video, 250 - 31, 16, 2)  # last valid start


class TestSerialization:
    def test_round_trip(self, small, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(small, path)
        loaded = load_dataset(path)
        assert loaded == small
        assert loaded.generation_seed == 5
        assert path.stat().st_size == 36 + 12 * (8 + 64 * 32 * 32 * 3)

    def test_header_layout(self, small, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(small, path)
        head = path.read_bytes()[:36]
        assert head[:8] == b"CVRLDS1\x00"
        assert np.frombuffer(head[8:28], "<u4").tolist() == [3, 12, 64, 32, 32]
        assert np.frombuffer(head[28:36], "<u8")[0] == 5

    def test_bad_magic(self, small, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(small, path)
        data = bytearray(path.read_bytes())
        data[:8] = b"NOTVIDEO"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_truncated(self, small, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(small, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(FormatError, match="offset"):
            load_dataset(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "d.bin"
        path.write_bytes(b"CVRLDS1\x00\x01")
        with pytest.raises(FormatError):
            load_dataset(path)


def test_dataset_rejects_sparse_ids():
    v = ramp_video(T=8, video_id=1)
    with pytest.raises(ConfigurationError):
        Dataset([v], 2, 0, (8, 4, 4))


def test_subset_renumbers(small):
    sub = small.subset([5, 2])
    assert [v.video_id for v in sub] == [0, 1]
    assert sub.labels.tolist() == [small[5].label, small[2].label]
