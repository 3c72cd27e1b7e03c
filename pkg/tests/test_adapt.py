import dataclasses

import numpy as np
import pytest

from segadapt.adapt import SwdAdapter
from segadapt.datagen import DomainSpec, generate_domain_pair
from segadapt.errors import DivergenceError, InvalidInputError
from segadapt.gmm import ClassConditionalGmm, collect_confident_pool
from segadapt.network import ENCODER_DECODER_PARAMS, MlpSegmenter

SPEC = DomainSpec(
    n_classes=3, width=16, height=16, hue_spread_deg=60.0,
    hue_deg=25.0, brightness=0.2, noise_scale=1.5, seed=11,
)


@pytest.fixture(scope="module")
def fitted():
    src, tgt = generate_domain_pair(SPEC, 8, 8)
    net = MlpSegmenter(
        n_classes=3, hidden=(12, 12), embed_dim=4, iterations=400,
        learning_rate=1e-3, seed=0,
    )
    net.fit(src.images, src.labels)
    pool = collect_confident_pool(
        net, src.images, src.labels, conf_threshold=0.5, rng=np.random.default_rng(0)
    )
    gmm = ClassConditionalGmm(n_components=2, seed=0).fit_pool(pool)
    return src, tgt, net, gmm


def make_adapter(net, gmm, **kwargs):
    defaults = dict(
        network=net, gmm=gmm, conf_threshold=0.5, n_projections=16,
        iterations=10, batch_size=2, seed=0,
    )
    defaults.update(kwargs)
    return SwdAdapter(**defaults)


class TestAdaptationLoop:
    def test_zero_weight_leaves_encoder_decoder_bitwise(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, swd_weight=0.0, iterations=25)
        adapter.fit(tgt.images)
        for name in ENCODER_DECODER_PARAMS:
            np.testing.assert_array_equal(adapter.network_.params_[name], net.params_[name])

    def test_zero_weight_still_logs_both_terms(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, swd_weight=0.0, iterations=5)
        adapter.fit(tgt.images)
        assert len(adapter.swd_curve_) == 5
        assert np.all(np.isfinite(adapter.swd_curve_))

    def test_positive_weight_moves_encoder(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, swd_weight=0.5, iterations=10)
        adapter.fit(tgt.images)
        assert any(
            not np.array_equal(adapter.network_.params_[n], net.params_[n])
            for n in ENCODER_DECODER_PARAMS
        )

    def test_input_network_never_mutated(self, fitted):
        _, tgt, net, gmm = fitted
        before = {k: v.copy() for k, v in net.params_.items()}
        make_adapter(net, gmm, iterations=10).fit(tgt.images)
        for name, value in before.items():
            np.testing.assert_array_equal(net.params_[name], value)

    def test_zero_iterations_is_identity(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, iterations=0)
        adapter.fit(tgt.images)
        for name in net.params_:
            np.testing.assert_array_equal(adapter.network_.params_[name], net.params_[name])

    def test_seeded_determinism(self, fitted):
        _, tgt, net, gmm = fitted
        a = make_adapter(net, gmm, iterations=12).fit(tgt.images)
        b = make_adapter(net, gmm, iterations=12).fit(tgt.images)
        np.testing.assert_array_equal(a.ce_curve_, b.ce_curve_)
        np.testing.assert_array_equal(a.swd_curve_, b.swd_curve_)
        for name in a.network_.params_:
            np.testing.assert_array_equal(a.network_.params_[name], b.network_.params_[name])

    def test_curves_have_iteration_length(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, iterations=7).fit(tgt.images)
        assert len(adapter.ce_curve_) == 7
        assert len(adapter.swd_curve_) == 7

    def test_pseudo_batches_respect_filter_post_hoc(self, fitted):
        # re-draw the same pseudo stream and re-verify the acceptance rule
        # against the frozen source classifier
        _, tgt, net, gmm = fitted
        tau = 0.5
        from segadapt.numerics import SeedStreams

        rng = SeedStreams(0).generator("gmm")
        pseudo = gmm.sample_labeled(512, net.classifier_probs, gmm.source_label_dist_,
                                    conf_threshold=tau, rng=rng)
        probs = net.classifier_probs(pseudo.embeddings)
        assert np.all(np.argmax(probs, axis=1) == pseudo.labels)
        assert np.all(probs[np.arange(len(pseudo)), pseudo.labels] > tau)


class TestNoShiftStability:
    def test_identical_domains_leave_miou_unchanged(self):
        # target drawn from the source generator: the transport term starts
        # at batch-noise level and adaptation must not degrade accuracy
        spec = dataclasses.replace(SPEC, hue_deg=0.0, brightness=0.0, noise_scale=1.0)
        src, tgt = generate_domain_pair(spec, 8, 8)
        net = MlpSegmenter(n_classes=3, hidden=(12, 12), embed_dim=4, iterations=400,
                           learning_rate=1e-3, seed=0)
        net.fit(src.images, src.labels)
        pool = collect_confident_pool(net, src.images, src.labels, conf_threshold=0.5,
                                      rng=np.random.default_rng(0))
        gmm = ClassConditionalGmm(n_components=2, seed=0).fit_pool(pool)
        pre = net.score(tgt.images, tgt.labels)
        adapter = make_adapter(net, gmm, iterations=300, n_projections=32)
        adapter.fit(tgt.images)
        post = adapter.score(tgt.images, tgt.labels)
        assert abs(post - pre) <= 0.02

        # the initial transport term sits at the level of two source batches
        from segadapt.distances import sliced_wasserstein

        emb = net.transform(src.images).reshape(-1, 4)
        rng = np.random.default_rng(3)
        half_a = emb[rng.choice(len(emb), 512, replace=False)]
        half_b = emb[rng.choice(len(emb), 512, replace=False)]
        batch_noise = sliced_wasserstein(half_a, half_b, 32, 2, rng=0)
        assert adapter.swd_curve_[0] < 6.0 * max(batch_noise, 1e-6)


class TestLabelDistModes:
    def test_oracle_requires_labels(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, label_dist_mode="oracle")
        with pytest.raises(InvalidInputError):
            adapter.fit(tgt.images)

    def test_oracle_uses_target_frequencies(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, label_dist_mode="oracle", iterations=3)
        adapter.fit(tgt.images, tgt.labels)
        expected = np.bincount(tgt.labels.ravel(), minlength=3) / tgt.labels.size
        np.testing.assert_allclose(adapter.label_dist_used_, expected)

    def test_pseudo_mode_runs_without_labels(self, fitted):
        _, tgt, net, gmm = fitted
        adapter = make_adapter(net, gmm, label_dist_mode="pseudo", iterations=3)
        adapter.fit(tgt.images)
        assert adapter.label_dist_used_ is None

    def test_source_mode_needs_recorded_distribution(self, fitted):
        _, tgt, net, _ = fitted
        x = np.random.default_rng(0).normal(size=(60, 4))
        y = np.random.default_rng(0).integers(0, 3, size=60)
        bare = ClassConditionalGmm(n_components=1, seed=0).fit(x, y)
        bare.source_label_dist_ = None
        adapter = make_adapter(net, bare)
        with pytest.raises(InvalidInputError):
            adapter.fit(tgt.images)


class TestValidation:
    def test_requires_fitted_network(self, fitted):
        _, tgt, _, gmm = fitted
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            make_adapter(MlpSegmenter(n_classes=3, embed_dim=4), gmm).fit(tgt.images)

    def test_dimension_mismatch_rejected(self, fitted):
        _, tgt, net, _ = fitted
        x = np.random.default_rng(1).normal(size=(60, 7))
        wrong = ClassConditionalGmm(n_components=1, seed=0).fit(
            x, np.random.default_rng(1).integers(0, 3, size=60)
        )
        with pytest.raises(InvalidInputError):
            make_adapter(net, wrong).fit(tgt.images)

    def test_divergence_restores_last_good(self, fitted, tmp_path):
        _, tgt, net, gmm = fitted
        import copy

        poisoned = copy.deepcopy(net)
        poisoned.params_["w3"][0, 0] = np.nan
        ckpt = tmp_path / "aborted"
        adapter = make_adapter(poisoned, gmm, iterations=5, checkpoint_dir=str(ckpt))
        with pytest.raises(DivergenceError):
            adapter.fit(tgt.images)
        assert hasattr(adapter, "network_")
        # the abort left the restored checkpoint on disk
        assert (ckpt / "manifest.json").exists()

    def test_checkpoint_cadence_writes_to_disk(self, fitted, tmp_path):
        _, tgt, net, gmm = fitted
        ckpt = tmp_path / "ckpt"
        adapter = make_adapter(
            net, gmm, iterations=6, checkpoint_every=3, checkpoint_dir=str(ckpt)
        )
        adapter.fit(tgt.images)
        saved = MlpSegmenter.load(ckpt)
        for name in saved.params_:
            np.testing.assert_array_equal(saved.params_[name], adapter.network_.params_[name])

    def test_sklearn_params_roundtrip(self, fitted):
        _, _, net, gmm = fitted
        adapter = make_adapter(net, gmm, swd_weight=0.25)
        params = adapter.get_params(deep=False)
        assert params["swd_weight"] == 0.25
        clone = SwdAdapter(**params)
        assert clone.n_projections == adapter.n_projections
