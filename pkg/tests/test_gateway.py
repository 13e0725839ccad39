import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recode.errors import ConfigError, ReplayMissError
from recode.gateway import (
    Gateway,
    ImagePart,
    ModelRequest,
    ModelResponse,
    TextPart,
    cache_key,
    embedding_cache_key,
)
from recode.images import RasterImage, encode_png

from scripted import ScriptedProvider


def _png(rgb=(1, 2, 3), size=2):
    arr = np.zeros((size, size, 3), dtype=np.uint8)
    arr[:, :] = rgb
    return encode_png(RasterImage.from_array(arr))


def _req(**kwargs):
    defaults = dict(
        model_id="m1",
        parts=(TextPart("hello"), ImagePart(_png())),
        temperature=1.0,
        max_output_tokens=256,
    )
    defaults.update(kwargs)
    return ModelRequest(**defaults)


class TestCacheKey:
    def test_identical_logical_requests_share_a_key(self):
        assert cache_key(_req()) == cache_key(_req())

    def test_permuting_text_parts_changes_key(self):
        a = _req(parts=(TextPart("one"), TextPart("two")))
        b = _req(parts=(TextPart("two"), TextPart("one")))
        assert cache_key(a) != cache_key(b)

    def test_temperature_changes_key(self):
        assert cache_key(_req(temperature=0.0)) != cache_key(_req(temperature=1.0))

    def test_one_pixel_difference_changes_key(self):
        img_a = np.zeros((2, 2, 3), dtype=np.uint8)
        img_b = img_a.copy()
        img_b[0, 0, 0] = 1
        a = _req(parts=(ImagePart(encode_png(RasterImage.from_array(img_a))),))
        b = _req(parts=(ImagePart(encode_png(RasterImage.from_array(img_b))),))
        assert cache_key(a) != cache_key(b)

    @settings(max_examples=30, deadline=None)
    @given(
        field=st.sampled_from(["model_id", "temperature", "max_output_tokens", "text", "kind"]),
    )
    def test_flipping_any_field_changes_key(self, field):
        base = _req()
        if field == "model_id":
            mutated = _req(model_id="m2")
        elif field == "temperature":
            mutated = _req(temperature=0.5)
        elif field == "max_output_tokens":
            mutated = _req(max_output_tokens=257)
        elif field == "text":
            mutated = _req(parts=(TextPart("hellp"), ImagePart(_png())))
        else:  # part kind order
            mutated = _req(parts=(ImagePart(_png()), TextPart("hello")))
        assert cache_key(base) != cache_key(mutated)


class TestRequestValidation:
    def test_empty_parts_rejected(self):
        with pytest.raises(ValueError):
            ModelRequest(model_id="m", parts=(), temperature=0.0, max_output_tokens=1)

    def test_non_png_image_part_rejected(self):
        with pytest.raises(ValueError):
            ImagePart(b"JFIF not png")

    def test_empty_complete_response_rejected(self):
        with pytest.raises(ValueError):
            ModelResponse(text="", finish_class="complete")


class TestRecordReplay:
    def test_record_then_replay_byte_identical(self, tmp_path):
        provider = ScriptedProvider(completion_fn=lambda req: "the exact answer ☃")
        recorder = Gateway(mode="record", cache_dir=tmp_path, provider=provider)
        req = _req()
        recorded = recorder.complete(req)

        replayer = Gateway(mode="replay", cache_dir=tmp_path)
        replayed = replayer.complete(req)
        assert replayed.text == recorded.text == "the exact answer ☃"
        assert len(provider.completion_calls) == 1

    def test_replay_miss_names_the_key(self, tmp_path):
        gw = Gateway(mode="replay", cache_dir=tmp_path)
        req = _req()
        with pytest.raises(ReplayMissError) as excinfo:
            gw.complete(req)
        assert cache_key(req) in str(excinfo.value)

    def test_record_is_append_only(self, tmp_path):
        provider = ScriptedProvider(completion_fn=lambda req: "first")
        gw = Gateway(mode="record", cache_dir=tmp_path, provider=provider)
        req = _req()
        gw.complete(req)
        provider.completion_fn = lambda req: "second"
        assert gw.complete(req).text == "first"
        assert len(provider.completion_calls) == 1

    def test_record_overwrite_flag(self, tmp_path):
        provider = ScriptedProvider(completion_fn=lambda req: "first")
        Gateway(mode="record", cache_dir=tmp_path, provider=provider).complete(_req())
        provider.completion_fn = lambda req: "second"
        gw = Gateway(mode="record", cache_dir=tmp_path, provider=provider, overwrite=True)
        assert gw.complete(_req()).text == "second"

    def test_cache_entries_are_inspectable_json(self, tmp_path):
        provider = ScriptedProvider(completion_fn=lambda req: "payload")
        gw = Gateway(mode="record", cache_dir=tmp_path, provider=provider)
        req = _req()
        gw.complete(req)
        key = cache_key(req)
        entry_path = tmp_path / key[:2] / f"{key}.json"
        assert entry_path.is_file()
        entry = json.loads(entry_path.read_text())
        assert entry["response"]["text"] == "payload"
        assert entry["request"]["model_id"] == "m1"

    def test_replay_mode_requires_no_provider(self, tmp_path):
        gw = Gateway(mode="replay", cache_dir=tmp_path)
        assert gw.provider is None

    def test_live_mode_requires_provider(self):
        with pytest.raises(ConfigError):
            Gateway(mode="live")


class TestEmbeddings:
    def test_record_then_replay_identical_vector(self, tmp_path):
        provider = ScriptedProvider(embed_fn=lambda model, png: (0.5, -0.25, 1.0))
        img = RasterImage.from_array(np.full((2, 2, 3), 7, np.uint8))
        recorder = Gateway(mode="record", cache_dir=tmp_path, provider=provider)
        recorded = recorder.embed_image(img, "embed-1")

        replayer = Gateway(mode="replay", cache_dir=tmp_path)
        assert replayer.embed_image(img, "embed-1") == recorded
        assert replayer.embed_image(img, "embed-1").values == (0.5, -0.25, 1.0)

    def test_recorded_pair_distance_matches_stored_vectors(self, tmp_path):
        vectors = {0: (1.0, 0.0, 0.0), 1: (0.0, 1.0, 0.0)}
        calls = []

        def embed(model, png):
            calls.append(png)
            return vectors[len(calls) - 1]

        provider = ScriptedProvider(embed_fn=embed)
        gw = Gateway(mode="record", cache_dir=tmp_path, provider=provider)
        img_a = RasterImage.from_array(np.full((2, 2, 3), 0, np.uint8))
        img_b = RasterImage.from_array(np.full((2, 2, 3), 255, np.uint8))
        va = np.array(gw.embed_image(img_a, "embed-1").values)
        vb = np.array(gw.embed_image(img_b, "embed-1").values)

        replayer = Gateway(mode="replay", cache_dir=tmp_path)
        ra = np.array(replayer.embed_image(img_a, "embed-1").values)
        rb = np.array(replayer.embed_image(img_b, "embed-1").values)
        distance = float(np.linalg.norm(ra - rb))
        assert distance == pytest.approx(float(np.linalg.norm(va - vb)))
        assert distance == pytest.approx(np.sqrt(2.0))
        assert distance > 0

    def test_missing_embedding_fixture_is_replay_miss(self, tmp_path):
        gw = Gateway(mode="replay", cache_dir=tmp_path)
        img = RasterImage.from_array(np.full((2, 2, 3), 9, np.uint8))
        with pytest.raises(ReplayMissError):
            gw.embed_image(img, "embed-1")

    def test_key_depends_on_model_id(self):
        png = _png()
        assert embedding_cache_key("a", png) != embedding_cache_key("b", png)
