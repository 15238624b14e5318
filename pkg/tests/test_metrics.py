import numpy as np
import pytest

from driftless import metrics as mx
from driftless import synthworld as sw
from driftless.conditioning import PromptTrack
from driftless.errors import ContractError
from driftless.schedule import LatentSequence


def toy_embeds(dim=4):
    """Embedders over a toy world: caption 'axis:i' maps to basis vector e_i,
    frames embed to their own normalized value."""

    def text_embed(caption):
        i = int(caption.split(":")[1])
        v = np.zeros(dim)
        v[i] = 1.0
        return v

    def frame_embed(latent):
        n = np.linalg.norm(latent)
        return latent / n if n > 1e-12 else np.zeros_like(latent)

    return mx.EmbeddingPair(text_embed=text_embed, frame_embed=frame_embed)


def track_for(captions, dim=4):
    embeds = toy_embeds(dim)
    blocks = np.stack([embeds.text_embed(c)[None, :] for c in captions])
    return PromptTrack(blocks=blocks, source="frame_level", raw=tuple(captions))


def basis_video(indices, dim=4):
    frames = np.zeros((len(indices), dim))
    for f, i in enumerate(indices):
        frames[f, i] = 1.0
    return LatentSequence.clean(frames)


class TestGlobalSimilarity:
    def test_perfect_match(self):
        video = basis_video([1] * 9)
        assert mx.global_similarity("axis:1", video, toy_embeds()) == pytest.approx(1.0)

    def test_orthogonal_scene(self):
        video = basis_video([2] * 9)
        assert mx.global_similarity("axis:1", video, toy_embeds()) == pytest.approx(0.0, abs=1e-12)

    def test_half_and_half_matches_mean_then_normalize_oracle(self):
        video = basis_video([0] * 4 + [1] * 4)
        got = mx.global_similarity("axis:0", video, toy_embeds())
        # mean of 8 unit frames = (e0 + e1)/2, normalized -> 1/sqrt(2) on axis 0
        assert got == pytest.approx(1.0 / np.sqrt(2.0))

    def test_short_video_uses_all_frames(self):
        video = basis_video([0, 1, 1])
        mean = np.array([1.0, 2.0, 0.0, 0.0]) / 3.0
        expect = mean[0] / np.linalg.norm(mean)
        assert mx.global_similarity("axis:0", video, toy_embeds()) == pytest.approx(expect)

    def test_empty_video_rejected(self):
        video = LatentSequence.clean(np.zeros((0, 4)))
        with pytest.raises(ContractError):
            mx.global_similarity("axis:0", video, toy_embeds())


class TestFrameConsistency:
    def test_perfect_per_frame_match(self):
        captions = ["axis:0", "axis:1", "axis:2"]
        video = basis_video([0, 1, 2])
        assert mx.frame_consistency(track_for(captions), video, toy_embeds()) == pytest.approx(1.0)

    def test_swapped_orthogonal_scenes(self):
        captions = ["axis:0", "axis:1"]
        video = basis_video([1, 0])
        got = mx.frame_consistency(track_for(captions), video, toy_embeds())
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_random_assignment_approaches_one_over_k(self):
        k, n = 4, 4000
        rng = np.random.default_rng(0)
        captions = [f"axis:{rng.integers(0, k)}" for _ in range(n)]
        video = basis_video(rng.integers(0, k, size=n).tolist())
        got = mx.frame_consistency(track_for(captions), video, toy_embeds())
        # per-frame sim is Bernoulli(1/k); 3 standard errors of the mean
        se = np.sqrt((1 / k) * (1 - 1 / k) / n)
        assert abs(got - 1 / k) <= 3 * se

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            mx.frame_consistency(track_for(["axis:0"]), basis_video([0, 1]), toy_embeds())


class TestConfusionDegree:
    def test_zero_for_perfectly_aligned_orthogonal_prompts(self):
        captions = ["axis:0", "axis:1", "axis:2"]
        video = basis_video([0, 1, 2])
        report = mx.confusion_degree(track_for(captions), video, toy_embeds())
        assert np.max(np.abs(report.per_prompt)) <= 1e-12
        assert report.mean_cd == pytest.approx(0.0, abs=1e-12)

    def test_blended_frames_give_unit_confusion(self):
        # brute-force 2x2 oracle: both frames are the normalized blend of two
        # orthonormal prompts, so S~_TF is all ones while S~_TT is identity;
        # each prompt accrues exactly 1.0 of confusion from the other column
        captions = ["axis:0", "axis:1"]
        blend = np.zeros((2, 4))
        blend[:, 0] = 1.0 / np.sqrt(2.0)
        blend[:, 1] = 1.0 / np.sqrt(2.0)
        video = LatentSequence.clean(blend)
        report = mx.confusion_degree(track_for(captions), video, toy_embeds())
        assert np.allclose(report.s_tf_norm, 1.0, atol=1e-12)
        assert np.allclose(report.s_tt_norm, np.eye(2), atol=1e-12)
        assert np.allclose(report.per_prompt, 1.0, atol=1e-9)
        assert report.mean_cd == pytest.approx(1.0, abs=1e-9)

    def test_normalized_diagonals_are_one(self):
        rng = np.random.default_rng(1)
        world = sw.World(sw.WorldParams(num_scenes=3, D=8, sigma=0.05, seed=4))
        embeds = sw.ground_truth_embedders(world)
        script = sw.sample_script(3, 9, rng, scene_pool=3)
        video = sw.render_latents(script, world, rng)
        blocks = np.stack([embeds.text_embed(c)[None, :] for c in script.captions])
        track = PromptTrack(blocks=blocks, source="frame_level", raw=script.captions)
        report = mx.confusion_degree(track, video, embeds)
        assert np.allclose(np.diag(report.s_tt_norm), 1.0, atol=1e-12)
        assert np.allclose(np.diag(report.s_tf_norm), 1.0, atol=1e-12)
        assert np.all(report.per_prompt >= 0.0)

    def test_invariant_to_global_rescaling_of_similarities(self):
        # scaling every raw similarity by c > 0 cancels in the normalization
        captions = ["axis:0", "axis:1", "axis:2"]
        rng = np.random.default_rng(2)
        frames = rng.standard_normal((3, 4))
        video = LatentSequence.clean(frames)
        base = mx.confusion_degree(track_for(captions), video, toy_embeds())
        scaled = base.s_tf * 3.7, base.s_tt * 3.7
        tf_denom = np.maximum(np.diag(scaled[0]), 1e-6)[:, None]
        tt_denom = np.maximum(np.diag(scaled[1]), 1e-6)[:, None]
        per = np.maximum(0.0, scaled[0] / tf_denom - scaled[1] / tt_denom).sum(axis=1)
        assert np.allclose(per, base.per_prompt, atol=1e-12)

    def test_csv_has_row_per_prompt_plus_summary(self):
        captions = ["axis:0", "axis:1"]
        video = basis_video([0, 1])
        report = mx.confusion_degree(track_for(captions), video, toy_embeds())
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "prompt_index,confusion_degree"
        assert len(lines) == 4 and lines[-1].startswith("mean,")


class TestDriftProfile:
    def test_constant_error_zero_slope(self):
        video = LatentSequence.clean(np.ones((6, 3)))
        means = np.zeros((6, 3))
        profile = mx.drift_profile(video, means)
        assert np.allclose(profile.errors, 3.0)
        assert profile.slope == pytest.approx(0.0, abs=1e-12)

    def test_linear_error_recovers_slope(self):
        F, c = 8, 0.37
        frames = np.zeros((F, 1))
        frames[:, 0] = np.sqrt(c * np.arange(F))
        profile = mx.drift_profile(LatentSequence.clean(frames), np.zeros((F, 1)))
        assert profile.slope == pytest.approx(c, rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            mx.drift_profile(LatentSequence.clean(np.zeros((3, 2))), np.zeros((3, 3)))


class TestSignTest:
    def test_exact_small_cases(self):
        assert mx.sign_test_pvalue(10, 10) == pytest.approx(1 / 1024)
        assert mx.sign_test_pvalue(9, 10) == pytest.approx(11 / 1024)
        assert mx.sign_test_pvalue(0, 10) == pytest.approx(1.0)
        # 9/10 clears alpha=0.05, 8/10 does not
        assert mx.sign_test_pvalue(9, 10) < 0.05 < mx.sign_test_pvalue(8, 10)
