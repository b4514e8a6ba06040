import numpy as np
import pytest
from PIL import Image

from oddsift.catalog import DatasetCatalog, ImageRecord
from oddsift.errors import IntegrityError, NotFoundError
from oddsift.shards import (
    ShardReader,
    build_shard_cache,
    iter_shard,
    quantise_u8,
    validate_shard,
    write_shards,
)
from oddsift.stretch import StretchSpec


def _random_images(rng, n, channels=1, side=8):
    return [
        (f"id{i:05d}", rng.integers(0, 256, size=(channels, side, side), dtype=np.uint8).astype(np.uint8))
        for i in range(n)
    ]


class TestWriteRead:
    def test_shard_counts_ceiling_division(self, tmp_path, rng):
        images = _random_images(rng, 3)
        write_shards(iter(images), tmp_path, shard_size=2, count=3, channels=1, height=8, width=8)
        shard_files = sorted(tmp_path.glob("*.amsh"))
        assert len(shard_files) == 2
        counts = [validate_shard(p)[0] for p in shard_files]
        assert counts == [2, 1]

    def test_round_trip_bytes_identical(self, tmp_path, rng):
        images = _random_images(rng, 5)
        write_shards(iter(images), tmp_path, shard_size=2, count=5, channels=1, height=8, width=8)
        reader = ShardReader(tmp_path)
        for record_id, pixels in images:
            np.testing.assert_array_equal(reader.read(record_id), pixels)

    def test_random_access_against_memory_oracle(self, tmp_path, rng):
        # 10,000 images, 1,000 random reads vs an in-memory map
        n = 10_000
        images = _random_images(rng, n, channels=1, side=8)
        oracle = {record_id: pixels for record_id, pixels in images}
        write_shards(iter(images), tmp_path, shard_size=1024, count=n, channels=1, height=8, width=8)
        reader = ShardReader(tmp_path)
        picks = rng.choice(list(oracle), size=1000, replace=False)
        for record_id in picks:
            np.testing.assert_array_equal(reader.read(record_id), oracle[record_id])

    def test_duplicate_id_rejected(self, tmp_path, rng):
        images = _random_images(rng, 2)
        images[1] = (images[0][0], images[1][1])
        with pytest.raises(IntegrityError):
            write_shards(iter(images), tmp_path, shard_size=8, count=2, channels=1, height=8, width=8)

    def test_missing_footer_detected(self, tmp_path, rng):
        images = _random_images(rng, 2)
        write_shards(iter(images), tmp_path, shard_size=8, count=2, channels=1, height=8, width=8)
        shard = next(tmp_path.glob("*.amsh"))
        data = shard.read_bytes()
        shard.write_bytes(data[:-4] + b"XXXX")
        with pytest.raises(IntegrityError):
            validate_shard(shard)

    def test_unknown_id(self, tmp_path, rng):
        images = _random_images(rng, 2)
        write_shards(iter(images), tmp_path, shard_size=8, count=2, channels=1, height=8, width=8)
        reader = ShardReader(tmp_path)
        with pytest.raises(NotFoundError):
            reader.read("nope")

    def test_iter_shard_order_and_content(self, tmp_path, rng):
        images = _random_images(rng, 7)
        write_shards(iter(images), tmp_path, shard_size=7, count=7, channels=1, height=8, width=8)
        shard = next(tmp_path.glob("*.amsh"))
        streamed = list(iter_shard(shard))
        assert [record_id for record_id, _ in streamed] == [record_id for record_id, _ in images]
        for (_, a), (_, b) in zip(streamed, images):
            np.testing.assert_array_equal(a, b)

    def test_round_trip_property_many_images(self, tmp_path, rng):
        # >= 1000 random images, byte-exact on every stored record
        images = _random_images(rng, 1000, side=8)
        write_shards(iter(images), tmp_path, shard_size=128, count=1000, channels=1, height=8, width=8)
        reader = ShardReader(tmp_path)
        for record_id, pixels in images:
            np.testing.assert_array_equal(reader.read(record_id), pixels)


class TestBuildCache:
    def _catalog_with_pngs(self, tmp_path, rng, n=5, side=16):
        cat = DatasetCatalog()
        for i in range(n):
            arr = rng.integers(0, 256, size=(side, side), dtype=np.uint8).astype(np.uint8)
            path = tmp_path / f"img{i}.png"
            Image.fromarray(arr, mode="L").save(path)
            cat.add_record(ImageRecord(id=f"img{i}", path=str(path)))
        return cat

    def test_build_and_read(self, tmp_path, rng):
        cat = self._catalog_with_pngs(tmp_path, rng)
        cache = tmp_path / "cache"
        build_shard_cache(cat, StretchSpec("linear-minmax"), cache, shard_size=2, size=16)
        reader = ShardReader(cache)
        assert len(reader) == 5
        assert reader.shape() == (1, 16, 16)

    def test_quantisation_matches_source(self, tmp_path, rng):
        # u8 source + linear-minmax + no resize: cache pixels equal the
        # quantised stretch of the source
        arr = rng.integers(0, 256, size=(16, 16), dtype=np.uint8).astype(np.uint8)
        path = tmp_path / "img.png"
        Image.fromarray(arr, mode="L").save(path)
        cat = DatasetCatalog()
        cat.add_record(ImageRecord(id="a", path=str(path)))
        cache = tmp_path / "cache"
        build_shard_cache(cat, StretchSpec("linear-minmax"), cache, size=16)
        reader = ShardReader(cache)
        lo, hi = arr.min(), arr.max()
        expected = quantise_u8((arr.astype(np.float32) - lo) / (hi - lo))
        np.testing.assert_array_equal(reader.read("a")[0], expected)

    def test_gray_replicated_to_rgb(self, tmp_path, rng):
        cat = self._catalog_with_pngs(tmp_path, rng, n=2)
        cache = tmp_path / "cache"
        build_shard_cache(cat, StretchSpec(), cache, size=16, channels=3)
        reader = ShardReader(cache)
        pixels = reader.read("img0")
        assert pixels.shape == (3, 16, 16)
        np.testing.assert_array_equal(pixels[0], pixels[1])
