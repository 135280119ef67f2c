import numpy as np
import pytest

import examiner as ex
from examiner.classify import Classifier, ShapeTarget, train_classifier
from examiner.render import ShapeInstance, canonical_instances, render, render_space


@pytest.fixture(scope="module")
def small_clf():
    # deliberately small training run; unit tests only need a valid model
    clf, metrics = train_classifier(
        list(canonical_instances()),
        m=10,
        training_space=render_space(),
        epochs=200,
        seed=0,
    )
    return clf, metrics


class TestClassifier:
    def test_zero_weights_uniform_probabilities(self):
        clf = Classifier(
            arch="linear", w_out=np.zeros((6, 1024)), b_out=np.zeros(6)
        )
        img = render(ShapeInstance("disk"), np.array([0.0, 1.0, 0.0, 0.0, 0.9, 0.1]))
        p = clf.classify(img)
        assert np.allclose(p, 1 / 6)

    def test_probabilities_sum_to_one(self, small_clf):
        clf, _ = small_clf
        rng = np.random.default_rng(0)
        space = render_space()
        for inst in canonical_instances():
            imgs = np.stack([render(inst, s) for s in space.uniform(rng, 5)])
            P = clf.classify_batch(imgs)
            assert np.all(np.abs(P.sum(axis=1) - 1.0) < 1e-12)
            assert np.all(P > 0)

    def test_loss_of_in_unit_interval_and_compositional(self, small_clf):
        clf, _ = small_clf
        space = render_space()
        rng = np.random.default_rng(1)
        for _ in range(100):
            inst = canonical_instances()[rng.integers(0, 6)]
            s = space.uniform(rng)
            loss = ex.loss_of(clf, inst, s)
            p = clf.classify(render(inst, s))[inst.label]
            assert loss == pytest.approx(1.0 - p, abs=1e-15)
            assert 0.0 <= loss <= 1.0

    def test_p_true_one_gives_zero_loss(self):
        clf = Classifier(arch="linear", w_out=np.zeros((6, 1024)), b_out=np.zeros(6))
        clf.b_out[2] = 1000.0
        inst = ShapeInstance("triangle")  # label 2
        s = np.array([0.0, 1.0, 0.0, 0.0, 0.9, 0.1])
        assert ex.loss_of(clf, inst, s) == pytest.approx(0.0, abs=1e-12)

    def test_checkpoint_roundtrip(self, small_clf, tmp_path):
        clf, _ = small_clf
        path = tmp_path / "clf.json"
        clf.save(path)
        loaded = Classifier.load(path)
        img = render(ShapeInstance("square"), np.array([0.3, 1.1, 0.1, -0.1, 0.7, 0.2]))
        assert np.array_equal(loaded.classify(img), clf.classify(img))
        assert loaded.arch == clf.arch


class TestTraining:
    def test_canonical_six_reach_095_at_500_epochs(self):
        clf, metrics = train_classifier(
            list(canonical_instances()),
            m=10,
            training_space=render_space(),
            epochs=500,
            seed=0,
        )
        assert metrics["final_train_accuracy"] >= 0.95

    def test_single_class_degenerate(self):
        clf, metrics = train_classifier(
            [ShapeInstance("ring")],
            m=8,
            training_space=render_space(),
            epochs=300,
            seed=1,
        )
        from examiner.numerics import rng_stream
        from examiner.render import render_batch

        rng = rng_stream(1, "train-classifier", "ring")
        scen = render_space().uniform(rng, 8)
        P = clf.classify_batch(render_batch(ShapeInstance("ring"), scen))
        assert np.all(P[:, ShapeInstance("ring").label] >= 0.99)

    def test_deterministic_training(self):
        kwargs = dict(
            m=3, training_space=render_space(), epochs=50, seed=7
        )
        a, _ = train_classifier(list(canonical_instances()), **kwargs)
        b, _ = train_classifier(list(canonical_instances()), **kwargs)
        assert np.array_equal(a.w_out, b.w_out)
        assert np.array_equal(a.b_out, b.b_out)

    def test_empty_instances_rejected(self):
        with pytest.raises(ex.InvalidConfigError):
            train_classifier([], m=5, training_space=render_space())
        with pytest.raises(ex.InvalidConfigError):
            train_classifier(list(canonical_instances()), m=0, training_space=render_space())

    def test_loss_curve_non_increasing_tail(self, small_clf):
        _, metrics = small_clf
        curve = np.array(metrics["loss_curve"])
        tail = curve[len(curve) // 10 :]
        assert np.all(np.diff(tail) <= 1e-12)

    def test_restricted_space_stays_within_bounds(self):
        space = render_space()
        narrowed = ex.restrict_training_space(space, "foreground_brightness", 0.6, 1.0)
        assert narrowed.factors[4].lower == 0.6
        rng = np.random.default_rng(0)
        draws = narrowed.uniform(rng, 200)
        assert np.all(draws[:, 4] >= 0.6)
        # other factors untouched
        for i in (0, 1, 2, 3, 5):
            assert narrowed.factors[i] == space.factors[i]

    def test_restrict_rejects_superset(self):
        with pytest.raises(ex.InvalidConfigError):
            ex.restrict_training_space(render_space(), "foreground_brightness", 0.1, 1.1)


class TestShapeTarget:
    def test_evaluate_detail_correctness_flag(self, small_clf):
        clf, _ = small_clf
        inst = canonical_instances()[0]
        tgt = ShapeTarget(clf, inst)
        rng = np.random.default_rng(3)
        for s in tgt.space.uniform(rng, 20):
            loss, correct = tgt.evaluate_detail(s)
            p = clf.classify(render(inst, s))
            assert correct == (np.argmax(p) == inst.label)
            assert loss == pytest.approx(1.0 - p[inst.label], abs=1e-15)

    def test_batch_matches_single(self, small_clf):
        clf, _ = small_clf
        inst = canonical_instances()[3]
        tgt = ShapeTarget(clf, inst)
        rng = np.random.default_rng(4)
        scens = tgt.space.uniform(rng, 15)
        batch = tgt.evaluate_batch(scens)
        single = [tgt.evaluate(s) for s in scens]
        assert np.allclose(batch, single, atol=1e-12)
